"""HTTP question-generation backend with bounded retries.

Wire format: POST JSON ``{"seed", "image_id", "modality"}``, expecting
``{"question", "answer", "cot"}`` back. Transport failures and 5xx
responses are retried with exponential backoff; anything the service
answered deliberately (4xx, malformed bodies) is not, since a retry would
send the exact same request.
"""

from __future__ import annotations

import time
from typing import Callable, Optional, Tuple

import requests

from .errors import BackendError, MalformedResponseError, ValidationError

_REQUIRED_FIELDS = ("question", "answer", "cot")


class RemoteQaGenerator:
    """QA backend speaking to a remote service; satisfies the forge protocol."""

    def __init__(self, endpoint: str, timeout: float = 10.0, attempts: int = 3,
                 backoff_base: float = 0.5,
                 session: Optional[requests.Session] = None,
                 sleeper: Callable[[float], None] = time.sleep):
        if not endpoint:
            raise ValidationError("remote endpoint must be non-empty")
        if attempts < 1:
            raise ValidationError("attempts must be at least 1")
        if timeout <= 0.0:
            raise ValidationError("timeout must be positive")
        if backoff_base < 0.0:
            raise ValidationError("backoff_base must be non-negative")
        self.endpoint = endpoint
        self.timeout = timeout
        self.attempts = attempts
        self.backoff_base = backoff_base
        self.generator_id = f"remote:{endpoint}"
        self._session = session or requests.Session()
        self._sleeper = sleeper

    def generate(self, seed: str, image_id: str, modality: str) -> Tuple[str, str, str]:
        payload = {"seed": seed, "image_id": image_id, "modality": modality}
        last_error: Optional[BackendError] = None
        for attempt in range(1, self.attempts + 1):
            if attempt > 1:
                self._sleeper(self.backoff_base * 2 ** (attempt - 2))
            try:
                response = self._session.post(self.endpoint, json=payload,
                                              timeout=self.timeout)
            except (requests.Timeout, requests.ConnectionError) as exc:
                last_error = BackendError(
                    f"{self.endpoint}: attempt {attempt}/{self.attempts} "
                    f"failed: {exc}"
                )
                continue
            if 500 <= response.status_code < 600:
                last_error = BackendError(
                    f"{self.endpoint}: attempt {attempt}/{self.attempts} "
                    f"got status {response.status_code}"
                )
                continue
            if not 200 <= response.status_code < 300:
                raise BackendError(
                    f"{self.endpoint}: status {response.status_code}, not retrying"
                )
            return self._parse(response)
        raise last_error

    def _parse(self, response) -> Tuple[str, str, str]:
        try:
            obj = response.json()
        except ValueError:
            raise MalformedResponseError(
                f"{self.endpoint}: response body is not JSON"
            ) from None
        if not isinstance(obj, dict):
            raise MalformedResponseError(
                f"{self.endpoint}: response must be a JSON object"
            )
        values = []
        for name in _REQUIRED_FIELDS:
            value = obj.get(name)
            if not isinstance(value, str) or not value:
                raise MalformedResponseError(
                    f"{self.endpoint}: missing or empty field {name!r}"
                )
            values.append(value)
        return tuple(values)
