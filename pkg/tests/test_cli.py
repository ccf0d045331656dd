import json
import os

import numpy as np
import pandas as pd
import pytest

from gliorad.cli import load_run_config, main
from gliorad.errors import UsageError
from gliorad.evaluation.protocol import ModelSpec, report_table, table1_models
from gliorad.radiomics import MODALITIES, full_feature_names
from gliorad._util import load_json


def _write_config(dir_path, name="run.json", **overrides) -> str:
    payload = {
        "schema": "gliorad-run/1",
        "seed": 7,
        "paths": {
            "cohort_csv": "world/cohort.csv",
            "image_root": "world/images",
            "output_dir": "out",
        },
        "pipeline": {"smote": False, "combat": True},
        "selection": {"n": 4, "k": 3, "f_grid": [5, 10]},
        "split_plan": {
            "n_repetitions": 3,
            "inner_folds": 3,
            "train_centers": ["A"],
            "ext_centers": ["B"],
        },
        "models": ["M1-demo", "M1-img", "M1-demo-img"],
        "world": {
            "n": 30,
            "side": 24,
            "image_signal": 1.0,
            "centers": [
                {"name": "A", "weight": 2.0, "offset": -5.0},
                {"name": "B", "weight": 1.0, "offset": 4.0},
            ],
        },
        "export": {"grid_size": 32, "grid_spacing": 1.0},
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(payload.get(key), dict):
            payload[key].update(value)
            payload[key] = {k: v for k, v in payload[key].items() if v is not None}
        elif value is None:
            payload.pop(key, None)
        else:
            payload[key] = value
    path = os.path.join(dir_path, name)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
    return path


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One fully materialized run of every stage on a small two-center world."""
    root = str(tmp_path_factory.mktemp("cli-pipeline"))
    config = _write_config(root)
    for command in (
        "simulate", "extract", "harmonize", "select",
        "train", "evaluate", "report", "export-dl",
    ):
        assert main([command, "--config", config, "--jobs", "1"]) == 0
    return root, config


class TestConfigValidation:
    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["extract", "--config", str(tmp_path / "nope.json")]) == 2
        assert "not found" in capsys.readouterr().err

    def test_malformed_json(self, tmp_path, capsys):
        path = tmp_path / "run.json"
        path.write_text("{broken")
        assert main(["extract", "--config", str(path)]) == 2
        assert "not valid JSON" in capsys.readouterr().err

    def test_field_level_diagnostics(self, tmp_path, capsys):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({
            "schema": "gliorad-run/9",
            "paths": {"cohort_csv": "x/cohort.csv", "output_dir": "out", "typo": 1},
            "pipeline": {"smote": "yes"},
            "selection": {"seed": 3},
            "split_plan": {"seed": 3},
            "models": ["M4-demo", "M1-demo", "M1-demo"],
            "export": {"grid_size": 2},
            "bogus": True,
        }))
        assert main(["extract", "--config", str(path)]) == 2
        err = capsys.readouterr().err
        for needle in (
            "schema:", "seed: required integer is missing", "paths.typo: unknown key",
            "paths.image_root:", "pipeline.smote:", "selection.seed: not allowed",
            "split_plan.seed: not allowed", "models[0]:", "duplicate model names",
            "export.grid_size:", "bogus: unknown key",
        ):
            assert needle in err

    def test_simulate_layout_contract(self, tmp_path, capsys):
        config = _write_config(
            str(tmp_path),
            paths={"cohort_csv": "world/table.csv", "image_root": "elsewhere",
                   "output_dir": "out"},
        )
        assert main(["simulate", "--config", config]) == 2
        err = capsys.readouterr().err
        assert "paths.cohort_csv" in err and "paths.image_root" in err

    def test_simulate_requires_world(self, tmp_path, capsys):
        config = _write_config(str(tmp_path), world=None)
        assert main(["simulate", "--config", config]) == 2
        assert "world" in capsys.readouterr().err

    def test_harmonize_requires_combat(self, tmp_path, capsys):
        config = _write_config(str(tmp_path), pipeline={"combat": False})
        assert main(["harmonize", "--config", config]) == 2
        assert "pipeline.combat" in capsys.readouterr().err

    def test_select_requires_an_image_model(self, tmp_path, capsys):
        config = _write_config(str(tmp_path), models=["M1-demo"])
        assert main(["select", "--config", config]) == 2
        assert "models:" in capsys.readouterr().err

    def test_output_dir_env_override(self, tmp_path, monkeypatch):
        config = _write_config(str(tmp_path))
        monkeypatch.setenv("GLIORAD_OUTPUT_DIR", str(tmp_path / "elsewhere"))
        cfg = load_run_config(config, "simulate")
        assert cfg.output_dir == str(tmp_path / "elsewhere")

    def test_default_models_are_the_model_matrix(self, tmp_path):
        config = _write_config(str(tmp_path), models=None)
        cfg = load_run_config(config, "simulate")
        assert cfg.models == table1_models()
        assert len(cfg.models) == 13

    def test_jobs_must_be_positive(self, tmp_path):
        config = _write_config(str(tmp_path))
        with pytest.raises(UsageError):
            from gliorad.cli import run
            run("simulate", config, jobs=0)


class TestModelNames:
    def test_roundtrip_all_models(self):
        for spec in table1_models():
            assert ModelSpec.from_name(spec.name) == spec

    def test_bad_names_rejected(self):
        for name in ("M9-demo", "M1-", "M1-demo-extra", "M1", "demo"):
            with pytest.raises(UsageError):
                ModelSpec.from_name(name)


class TestPipelineArtifacts:
    def test_feature_csv_shape(self, pipeline):
        root, _ = pipeline
        frame = pd.read_csv(os.path.join(root, "out", "features", "features.csv"))
        assert frame.shape == (30, 2569)
        assert list(frame.columns) == ["patient_id", *full_feature_names()]

    def test_harmonized_same_shape(self, pipeline):
        root, _ = pipeline
        frame = pd.read_csv(
            os.path.join(root, "out", "harmonized", "features_harmonized.csv")
        )
        assert frame.shape == (30, 2569)

    def test_every_stage_carries_hash_and_seed(self, pipeline):
        root, config = pipeline
        stage_dirs = {
            "simulate": os.path.join(root, "world"),
            "extract": os.path.join(root, "out", "features"),
            "harmonize": os.path.join(root, "out", "harmonized"),
            "select": os.path.join(root, "out", "selection"),
            "train": os.path.join(root, "out", "models"),
            "evaluate": os.path.join(root, "out", "report"),
            "report": os.path.join(root, "out", "tables"),
            "export-dl": os.path.join(root, "out", "dl"),
        }
        for command, path in stage_dirs.items():
            meta = load_json(os.path.join(path, "meta.json"))
            assert meta["command"] == command
            assert meta["complete"] is True
            assert meta["seed"] == 7
            assert len(meta["config_hash"]) == 64

    def test_artifact_files_carry_stage_hash(self, pipeline):
        root, _ = pipeline
        for rel in (
            ("selection", "S-1.json"),
            ("models", "M1-img.json"),
            ("report", "details", "M1-demo.json"),
            ("dl", "manifest.json"),
        ):
            payload = load_json(os.path.join(root, "out", *rel))
            stage_meta = load_json(os.path.join(root, "out", rel[0], "meta.json"))
            assert payload["config_hash"] == stage_meta["config_hash"]
            assert "seed" in payload

    def test_selection_artifact(self, pipeline):
        root, _ = pipeline
        chosen = load_json(os.path.join(root, "out", "selection", "S-1.json"))
        assert chosen["best_f"] in (5, 10)
        assert set(chosen["selected"]) <= set(full_feature_names())
        assert all(0.0 < v <= 1.0 for v in chosen["frequencies"].values())

    def test_train_artifacts(self, pipeline):
        root, _ = pipeline
        demo = load_json(os.path.join(root, "out", "models", "M1-demo.json"))
        assert demo["image_model"] is None
        assert demo["fusion_head"]["kind"] == "logistic"
        img = load_json(os.path.join(root, "out", "models", "M1-img.json"))
        assert img["fusion_head"] is None
        assert set(img["image_model"]["features"]) == set(img["selected"])
        fused = load_json(os.path.join(root, "out", "models", "M1-demo-img.json"))
        assert fused["image_model"] is not None
        assert "RRS" in fused["fusion_head"]["coefficients"]
        assert isinstance(fused["youden_threshold"], float)

    def test_report_has_one_row_per_model(self, pipeline):
        root, _ = pipeline
        payload = load_json(os.path.join(root, "out", "report", "report.json"))
        assert [row["model"] for row in payload["models"]] == [
            "M1-demo", "M1-img", "M1-demo-img",
        ]
        for row in payload["models"]:
            assert {"cv", "internal_test", "ext_test", "n_train", "n_ext"} <= set(row)

    def test_rendered_table(self, pipeline):
        root, _ = pipeline
        text = open(os.path.join(root, "out", "tables", "report.txt")).read()
        assert text.startswith("Model")
        assert "M1-demo-img" in text
        assert "comparisons" in text

    def test_report_table_renders_from_dict(self, pipeline):
        root, _ = pipeline
        payload = load_json(os.path.join(root, "out", "report", "report.json"))
        assert report_table(payload).startswith("Model")

    def test_export_tensors(self, pipeline):
        root, _ = pipeline
        labels = pd.read_csv(os.path.join(root, "out", "dl", "labels.csv"))
        cohort = pd.read_csv(os.path.join(root, "world", "cohort.csv"))
        assert len(labels) == (cohort["survival_6m"] != "unknown").sum()
        assert set(labels["label"]) <= {0, 1}
        pid = labels["patient_id"].iloc[0]
        image = np.load(os.path.join(root, "out", "dl", f"{pid}.npy"))
        seg = np.load(os.path.join(root, "out", "dl", f"{pid}_seg.npy"))
        assert image.shape == (4, 32, 32, 32) and image.dtype == np.float32
        assert seg.shape == (32, 32, 32) and seg.dtype == np.uint8
        assert set(np.unique(seg)) == {0, 1, 2, 3}
        manifest = load_json(os.path.join(root, "out", "dl", "manifest.json"))
        assert manifest["channels"] == list(MODALITIES)


class TestRerunSemantics:
    def test_finished_stage_is_a_noop(self, pipeline, capsys):
        _, config = pipeline
        assert main(["evaluate", "--config", config, "--jobs", "1"]) == 0
        assert "up to date" in capsys.readouterr().out

    def test_byte_identical_report_on_rebuild(self, pipeline):
        root, config = pipeline
        report_path = os.path.join(root, "out", "report", "report.json")
        before = open(report_path, "rb").read()
        assert main(["evaluate", "--config", config, "--jobs", "1", "--overwrite"]) == 0
        assert open(report_path, "rb").read() == before

    def test_mismatched_config_refused(self, pipeline, capsys):
        root, _ = pipeline
        other = _write_config(root, name="run8.json", seed=8)
        assert main(["extract", "--config", other]) == 1
        assert "different config" in capsys.readouterr().err

    def test_mismatched_resume_refused(self, pipeline, capsys):
        root, _ = pipeline
        other = _write_config(root, name="run9.json", seed=9)
        assert main(["extract", "--config", other, "--resume"]) == 1
        assert "refusing to resume" in capsys.readouterr().err

    def test_partial_run_refused_then_resumed(self, pipeline, capsys):
        root, _ = pipeline
        config = _write_config(root, name="run2.json", paths={"output_dir": "out2"})
        assert main(["extract", "--config", config, "--jobs", "1"]) == 0
        capsys.readouterr()

        stage = os.path.join(root, "out2", "features")
        meta = load_json(os.path.join(stage, "meta.json"))
        meta["complete"] = False
        with open(os.path.join(stage, "meta.json"), "w") as fh:
            json.dump(meta, fh)
        os.remove(os.path.join(stage, "features.csv"))
        for name in sorted(os.listdir(os.path.join(stage, "rows")))[:3]:
            os.remove(os.path.join(stage, "rows", name))

        assert main(["extract", "--config", config, "--jobs", "1"]) == 1
        assert "partial run" in capsys.readouterr().err
        assert main(["extract", "--config", config, "--jobs", "1", "--resume"]) == 0
        frame = pd.read_csv(os.path.join(stage, "features.csv"))
        assert frame.shape == (30, 2569)
        assert load_json(os.path.join(stage, "meta.json"))["complete"] is True

    def test_unmanaged_directory_refused(self, pipeline, capsys):
        root, _ = pipeline
        config = _write_config(root, name="run3.json", paths={"output_dir": "out3"})
        stage = os.path.join(root, "out3", "features")
        os.makedirs(stage)
        open(os.path.join(stage, "precious.txt"), "w").write("keep")
        assert main(["extract", "--config", config]) == 1
        assert "does not manage" in capsys.readouterr().err
        assert os.path.exists(os.path.join(stage, "precious.txt"))

    def test_downstream_requires_upstream(self, tmp_path, capsys):
        config = _write_config(str(tmp_path))
        assert main(["simulate", "--config", config, "--jobs", "1"]) == 0
        capsys.readouterr()
        assert main(["harmonize", "--config", config]) == 1
        assert "run `extract` first" in capsys.readouterr().err
