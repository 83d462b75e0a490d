"""Configuration loading: strict schema, env override, section wiring."""

import json

import pytest

from cotforge.config import AppConfig, load_config
from cotforge.errors import ConfigError


def write_config(tmp_path, obj, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj), encoding="utf-8")
    return path


class TestDefaults:
    def test_no_config_gives_defaults(self):
        cfg = load_config(None, env={})
        assert cfg.forge.backend == "template"
        assert cfg.forge.tau_iou == 0.0
        assert cfg.scheduler.rho == 0.3
        assert cfg.harness.batch_size == 32
        assert cfg.io.out is None

    def test_empty_document_gives_defaults(self, tmp_path):
        path = write_config(tmp_path, {})
        cfg = load_config(str(path), env={})
        assert cfg == load_config(None, env={})


class TestSections:
    def test_scheduler_values_flow_through(self, tmp_path):
        path = write_config(tmp_path, {"scheduler": {"rho": 0.5, "q": 3}})
        cfg = load_config(str(path), env={})
        assert cfg.scheduler.rho == 0.5
        assert cfg.scheduler.q == 3
        assert cfg.scheduler.kappa == 10.0  # untouched default

    def test_harness_values_and_weights(self, tmp_path):
        path = write_config(tmp_path, {"harness": {
            "epochs": 10, "lr": 0.01, "grid_dims": [4, 4],
            "weights": {"w_ground": 2.0},
        }})
        cfg = load_config(str(path), env={})
        assert cfg.harness.epochs == 10
        assert cfg.harness.grid_dims == (4, 4)
        assert cfg.harness.weights.w_ground == 2.0
        assert cfg.harness.weights.w_ans == 1.0

    def test_forge_remote_backend(self, tmp_path):
        path = write_config(tmp_path, {"forge": {
            "backend": "remote",
            "remote_endpoint": "http://qa.internal:8080/generate",
            "remote_timeout": 2.5,
        }})
        cfg = load_config(str(path), env={})
        assert cfg.forge.backend == "remote"
        assert cfg.forge.remote_endpoint.endswith("/generate")

    def test_io_paths(self, tmp_path):
        path = write_config(tmp_path, {"io": {"out": "corpus.jsonl"}})
        cfg = load_config(str(path), env={})
        assert cfg.io.out == "corpus.jsonl"


class TestStrictness:
    def test_unknown_top_level_key(self, tmp_path):
        path = write_config(tmp_path, {"scheduleur": {}})
        with pytest.raises(ConfigError, match="scheduleur"):
            load_config(str(path), env={})

    def test_unknown_section_key(self, tmp_path):
        path = write_config(tmp_path, {"scheduler": {"rho": 0.5, "rh0": 1}})
        with pytest.raises(ConfigError, match="rh0"):
            load_config(str(path), env={})

    def test_invalid_hyperparam_value_wrapped(self, tmp_path):
        path = write_config(tmp_path, {"scheduler": {"rho": 5.0}})
        with pytest.raises(ConfigError, match="rho"):
            load_config(str(path), env={})

    def test_remote_backend_requires_endpoint(self, tmp_path):
        path = write_config(tmp_path, {"forge": {"backend": "remote"}})
        with pytest.raises(ConfigError, match="endpoint"):
            load_config(str(path), env={})

    def test_unknown_backend(self, tmp_path):
        path = write_config(tmp_path, {"forge": {"backend": "oracle"}})
        with pytest.raises(ConfigError, match="backend"):
            load_config(str(path), env={})

    def test_bad_seed_template_placeholder(self, tmp_path):
        path = write_config(tmp_path, {"forge": {
            "seed_templates": ["A {lesion_klass} appears."],
        }})
        with pytest.raises(ConfigError, match="template"):
            load_config(str(path), env={})

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="no-such"):
            load_config("/tmp/no-such-config.json", env={})

    def test_non_object_document(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(ConfigError, match="object"):
            load_config(str(path), env={})

    def test_bad_json(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{nope", encoding="utf-8")
        with pytest.raises(ConfigError, match="JSON"):
            load_config(str(path), env={})

    def test_bad_unassigned_policy(self, tmp_path):
        path = write_config(tmp_path, {"forge": {"unassigned_policy": "invent"}})
        with pytest.raises(ConfigError, match="unassigned_policy"):
            load_config(str(path), env={})


class TestEnvOverride:
    def test_env_var_wins_over_flag(self, tmp_path):
        flag = write_config(tmp_path, {"forge": {"tau_iou": 0.1}}, "flag.json")
        envf = write_config(tmp_path, {"forge": {"tau_iou": 0.9}}, "env.json")
        cfg = load_config(str(flag), env={"COTFORGE_CONFIG": str(envf)})
        assert cfg.forge.tau_iou == 0.9

    def test_env_var_alone(self, tmp_path):
        envf = write_config(tmp_path, {"harness": {"seed": 9}})
        cfg = load_config(None, env={"COTFORGE_CONFIG": str(envf)})
        assert cfg.harness.seed == 9


class TestTemplateList:
    def test_default_template_always_first(self, tmp_path):
        path = write_config(tmp_path, {"forge": {
            "seed_templates": ["A {lesion_class} sits in the {organ_label}."],
        }})
        cfg = load_config(str(path), env={})
        templates = cfg.forge.template_list()
        assert templates[0] == "There is a {lesion_class} in the {organ_label}."
        assert len(templates) == 2
