"""Detection-to-VQA corpus forging.

Pipeline per annotation: pick the organ whose mask best overlaps the lesion
box (pixel-count IoU, argmax, ties to the lowest mask index), render the
seed sentence, and hand the seed to a QA backend that returns a question,
an answer, and a short chain-of-thought rationale. Annotations whose best
IoU falls at or below the threshold stay unassigned and are skipped by
default (or routed to an organ-free template, per config).
"""

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Protocol

from .errors import BackendError, MalformedResponseError, ValidationError
from .geometry import BBox, mask_iou, render_overlay  # noqa: F401  (re-export)

logger = logging.getLogger(__name__)

MODALITIES = ("CT", "XRay", "MRI", "Mammo")

DEFAULT_SEED_TEMPLATE = "There is a {lesion_class} in the {organ_label}."
ORGAN_FREE_SEED_TEMPLATE = "There is a {lesion_class}."

MAX_COT_SENTENCES = 4


@dataclass(frozen=True)
class DomainKey:
    """Curriculum domain: a (lesion class, modality) pair."""

    lesion_class: str
    modality: str

    def __post_init__(self):
        if not self.lesion_class or not self.modality:
            raise ValidationError("domain key fields must be non-empty")

    def as_str(self) -> str:
        return f"{self.lesion_class}|{self.modality}"

    @classmethod
    def from_str(cls, text: str) -> "DomainKey":
        lesion, sep, modality = text.partition("|")
        if not sep:
            raise ValidationError(f"bad domain key string: {text!r}")
        return cls(lesion, modality)


@dataclass(frozen=True)
class LesionAnnotation:
    box: BBox
    lesion_class: str

    def __post_init__(self):
        if not self.lesion_class:
            raise ValidationError("lesion_class must be non-empty")


@dataclass(eq=False)
class OrganMask:
    """Named binary mask; must contain at least one set pixel."""

    organ_label: str
    mask: "object"  # 2-D bool ndarray

    def __post_init__(self):
        import numpy as np

        self.mask = np.asarray(self.mask).astype(bool)
        if not self.organ_label:
            raise ValidationError("organ_label must be non-empty")
        if self.mask.ndim != 2:
            raise ValidationError("organ mask must be 2-D")
        if not self.mask.any():
            raise ValidationError(f"organ mask {self.organ_label!r} is empty")


@dataclass
class ImageRecord:
    image_id: str
    width: int
    height: int
    modality: str
    annotations: list

    def __post_init__(self):
        if not self.image_id:
            raise ValidationError("image_id must be non-empty")
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"image {self.image_id}: dims must be >= 1")
        if self.modality not in MODALITIES:
            raise ValidationError(
                f"image {self.image_id}: modality {self.modality!r} "
                f"not one of {MODALITIES}"
            )


@dataclass
class LesionOrganTriplet:
    """Assignment outcome for one annotation; organ_label None = unassigned."""

    image_id: str
    annotation: LesionAnnotation
    organ_label: Optional[str]
    iou_score: float

    @property
    def is_assigned(self) -> bool:
        return self.organ_label is not None


@dataclass
class VqaCotRecord:
    image_id: str
    box: BBox
    question: str
    answer: str
    cot: str
    domain: DomainKey
    seed: str
    generator_id: str

    def __post_init__(self):
        for name in ("image_id", "question", "answer", "seed", "generator_id"):
            if not getattr(self, name):
                raise ValidationError(f"record field {name!r} must be non-empty")
        # cot may be empty only in derived Hard pools, never in stored corpora

    def to_json_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "box": self.box.as_list(),
            "question": self.question,
            "answer": self.answer,
            "cot": self.cot,
            "domain": {
                "lesion_class": self.domain.lesion_class,
                "modality": self.domain.modality,
            },
            "seed": self.seed,
            "generator_id": self.generator_id,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "VqaCotRecord":
        try:
            box = data["box"]
            domain = data["domain"]
            return cls(
                image_id=data["image_id"],
                box=BBox(*[float(v) for v in box]),
                question=data["question"],
                answer=data["answer"],
                cot=data["cot"],
                domain=DomainKey(domain["lesion_class"], domain["modality"]),
                seed=data["seed"],
                generator_id=data["generator_id"],
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"bad corpus record: {exc}") from exc

    def stripped_of_cot(self) -> "VqaCotRecord":
        """Hard-pool variant of this record (rationale removed)."""
        clone = VqaCotRecord.__new__(VqaCotRecord)
        clone.__dict__.update(self.__dict__)
        clone.cot = ""
        return clone


class QaGenerator(Protocol):
    generator_id: str

    def generate(self, seed: str, image_id: str, modality: str) -> tuple:
        """Return (question, answer, cot) for a seed sentence."""


def assign_organ(image_id, annotation, masks, tau_iou=0.0) -> LesionOrganTriplet:
    """Pick the organ mask with the highest IoU against the annotation box.

    Ties break to the lowest mask index; a best IoU <= tau_iou leaves the
    annotation unassigned (with the score recorded).
    """
    if not masks:
        raise ValidationError("assign_organ requires at least one mask")
    shape = masks[0].mask.shape
    for om in masks:
        if om.mask.shape != shape:
            raise ValidationError("all masks for an image must share dims")
    best_idx = 0
    best = -1.0
    for k, om in enumerate(masks):
        iou = mask_iou(annotation.box, om.mask)
        if iou > best:
            best = iou
            best_idx = k
    if best <= tau_iou:
        return LesionOrganTriplet(image_id, annotation, None, best)
    return LesionOrganTriplet(image_id, annotation, masks[best_idx].organ_label, best)


def seed_from_triplet(triplet: LesionOrganTriplet, template=DEFAULT_SEED_TEMPLATE) -> str:
    if not triplet.is_assigned:
        raise ValidationError(
            f"cannot build a seed for unassigned annotation on {triplet.image_id}"
        )
    return template.format(
        lesion_class=triplet.annotation.lesion_class,
        organ_label=triplet.organ_label,
    )


def _template_to_regex(template: str) -> re.Pattern:
    pattern = re.escape(template)
    pattern = pattern.replace(re.escape("{lesion_class}"), r"(?P<lesion_class>.+?)")
    pattern = pattern.replace(re.escape("{organ_label}"), r"(?P<organ_label>.+)")
    return re.compile("^" + pattern + "$")


class TemplateQaGenerator:
    """Deterministic QA backend that fills fixed question/answer/CoT templates.

    It recovers the lesion class and organ label by parsing the seed sentence
    against the configured seed templates, so it honors the same wire shape
    as a remote backend (seed in, QA out).
    """

    generator_id = "template-v1"

    def __init__(self, seed_templates=None):
        templates = list(seed_templates or [DEFAULT_SEED_TEMPLATE])
        templates.append(ORGAN_FREE_SEED_TEMPLATE)
        self._parsers = [_template_to_regex(t) for t in templates]

    def generate(self, seed: str, image_id: str, modality: str) -> tuple:
        match = None
        for parser in self._parsers:
            match = parser.match(seed)
            if match:
                break
        if match is None:
            raise BackendError(f"seed does not match any configured template: {seed!r}")
        lesion = match.group("lesion_class")
        organ = match.groupdict().get("organ_label")
        if organ:
            question = f"Which organ contains the {lesion}?"
            answer = organ
            cot = (
                f"The image shows a {lesion}. Its location overlaps the {organ}. "
                f"Therefore the {lesion} is in the {organ}."
            )
        else:
            question = "What abnormality is shown?"
            answer = lesion
            cot = (
                f"The image shows a {lesion}. No single organ is identified. "
                f"Therefore the finding is a {lesion}."
            )
        return question, answer, cot


_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")


def split_sentences(text: str) -> list:
    """Sentence boundaries as used for rationale length accounting."""
    stripped = text.strip()
    if not stripped:
        return []
    return _SENTENCE_SPLIT.split(stripped)


def generate_qa(image: ImageRecord, seed: str, backend: QaGenerator) -> tuple:
    """Run one seed through a QA backend and normalize the result.

    Enforces non-empty question/answer/cot and caps the chain of thought at
    four sentences (truncating at a sentence boundary with a warning).
    """
    if not seed:
        raise ValidationError("seed must be non-empty")
    question, answer, cot = backend.generate(
        seed, image_id=image.image_id, modality=image.modality
    )
    if not question or not answer or not cot:
        raise MalformedResponseError(
            f"backend {backend.generator_id!r} returned empty fields "
            f"for image {image.image_id}"
        )
    sentences = split_sentences(cot)
    if len(sentences) > MAX_COT_SENTENCES:
        logger.warning(
            "truncating CoT for image %s from %d to %d sentences",
            image.image_id,
            len(sentences),
            MAX_COT_SENTENCES,
        )
        cot = " ".join(sentences[:MAX_COT_SENTENCES])
    return question, answer, cot


@dataclass
class ForgeFailure:
    image_id: str
    annotation_index: int
    error: str


@dataclass
class ForgeResult:
    records: list
    skipped_unassigned: int
    failures: list = field(default_factory=list)


@dataclass
class _ForgeTask:
    image: ImageRecord
    annotation_index: int
    annotation: LesionAnnotation
    seed: str


def build_corpus(
    dataset,
    masks_by_image,
    backend: QaGenerator,
    *,
    tau_iou=0.0,
    unassigned_policy="skip",
    seed_templates=None,
    concurrency=1,
    skip_failed=False,
) -> ForgeResult:
    """Forge a VQA-CoT corpus from detections and organ masks.

    Iterates the dataset in order (then annotations in order), so reruns on
    identical inputs produce identical corpora. QA generation may fan out
    over `concurrency` threads; results keep task order either way.
    """
    if unassigned_policy not in ("skip", "organ_free"):
        raise ValidationError(f"unknown unassigned_policy {unassigned_policy!r}")
    templates = list(seed_templates or [DEFAULT_SEED_TEMPLATE])

    tasks = []
    skipped = 0
    ordinal = 0
    for image in dataset:
        masks = list(masks_by_image.get(image.image_id, ()))
        for om in masks:
            if om.mask.shape != (image.height, image.width):
                raise ValidationError(
                    f"mask {om.organ_label!r} dims {om.mask.shape} do not match "
                    f"image {image.image_id} dims {(image.height, image.width)}"
                )
        for j, ann in enumerate(image.annotations):
            if masks:
                triplet = assign_organ(image.image_id, ann, masks, tau_iou)
            else:
                triplet = LesionOrganTriplet(image.image_id, ann, None, 0.0)
            if triplet.is_assigned:
                template = templates[ordinal % len(templates)]
                seed = seed_from_triplet(triplet, template)
            elif unassigned_policy == "organ_free":
                seed = ORGAN_FREE_SEED_TEMPLATE.format(
                    lesion_class=ann.lesion_class
                )
            else:
                skipped += 1
                ordinal += 1
                continue
            tasks.append(_ForgeTask(image, j, ann, seed))
            ordinal += 1

    def run_task(task: _ForgeTask):
        try:
            question, answer, cot = generate_qa(task.image, task.seed, backend)
        except BackendError as exc:
            if skip_failed:
                return None, ForgeFailure(
                    task.image.image_id, task.annotation_index, str(exc)
                )
            raise type(exc)(
                f"image {task.image.image_id} annotation "
                f"{task.annotation_index}: {exc}"
            ) from exc
        record = VqaCotRecord(
            image_id=task.image.image_id,
            box=task.annotation.box,
            question=question,
            answer=answer,
            cot=cot,
            domain=DomainKey(task.annotation.lesion_class, task.image.modality),
            seed=task.seed,
            generator_id=backend.generator_id,
        )
        return record, None

    if concurrency > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            outcomes = list(pool.map(run_task, tasks))
    else:
        outcomes = [run_task(t) for t in tasks]

    records = []
    failures = []
    for record, failure in outcomes:
        if failure is not None:
            failures.append(failure)
        else:
            records.append(record)
    if skipped:
        logger.info("skipped %d unassigned annotations", skipped)
    return ForgeResult(records=records, skipped_unassigned=skipped, failures=failures)
