"""Config-driven command line for the whole pipeline.

Eight subcommands cover the path from synthetic world to rendered report:
``simulate``, ``extract``, ``harmonize``, ``select``, ``train``,
``evaluate``, ``report``, and ``export-dl``. Each stage owns one artifact
directory and stamps it with a ``meta.json`` recording the hash of the
config slice it consumed plus the master seed. Rerunning a finished stage
under the same config is a no-op; a hash mismatch is refused unless
``--overwrite`` rebuilds the stage, and a partial run of a resumable stage
continues only under ``--resume`` with a matching hash.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from dataclasses import dataclass, fields, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from ._util import config_hash, derive_seed, dump_json, load_json
from .errors import ConfigError, GlioradError, UsageError
from .evaluation.protocol import (
    ModelSpec,
    SplitPlan,
    _fit_spec_model,
    assemble_report,
    finalize_external_test,
    report_table,
    statistical_evaluation,
    table1_models,
)
from .evaluation.stats import youden_threshold
from .modeling import PrognosticModel
from .preprocess import zscore_standardize
from .radiomics import MODALITIES, extract_patient_features, full_feature_names
from .selection import SelectionConfig, optimize_feature_budget
from .synthcohort import CenterSpec, WorldSpec, generate_cohort, read_patient_volumes
from .tabular import FeatureTable, combat_harmonize, load_cohort_csv, subset_mask
from .volume import crop_to_brain_fov

CONFIG_SCHEMA = "gliorad-run/1"
META_SCHEMA = "gliorad-meta/1"
OUTPUT_DIR_ENV = "GLIORAD_OUTPUT_DIR"

COMMANDS = (
    "simulate", "extract", "harmonize", "select",
    "train", "evaluate", "report", "export-dl",
)

# Stage directory per command, under the output dir; simulate instead owns
# the directory holding the cohort CSV.
_STAGE_DIRS = {
    "extract": "features",
    "harmonize": "harmonized",
    "select": "selection",
    "train": "models",
    "evaluate": "report",
    "report": "tables",
    "export-dl": "dl",
}

_RESUMABLE = ("extract", "export-dl")

_SEG_LABELS = {1: "edema", 2: "enhancing_tumor", 3: "tumor_core"}


# ---------------------------------------------------------------------------
# Run configuration


@dataclass(frozen=True)
class RunConfig:
    """One resolved run: paths, toggles, and every stage's parameters.

    ``raw_paths`` keeps the path strings exactly as written in the config
    file; artifact hashes use those, so relocating a whole tree does not
    invalidate its stages while editing the config does.
    """

    seed: int
    cohort_csv: str
    image_root: str
    output_dir: str
    smote: bool
    combat: bool
    selection: SelectionConfig
    plan: SplitPlan
    models: Tuple[ModelSpec, ...]
    world: Optional[WorldSpec]
    export_grid: int
    export_spacing: float
    raw_paths: Mapping[str, str]


def _block(payload: Mapping, key: str, problems: List[str]) -> dict:
    value = payload.get(key, {})
    if not isinstance(value, dict):
        problems.append(f"{key}: expected an object")
        return {}
    return dict(value)


def _require_int(block: Mapping, path: str, key: str, problems: List[str]) -> Optional[int]:
    value = block.get(key)
    if isinstance(value, int) and not isinstance(value, bool):
        return value
    problems.append(f"{path}{key}: required integer" + ("" if key in block else " is missing"))
    return None


def _opt_bool(block: Mapping, path: str, key: str, default: bool, problems: List[str]) -> bool:
    value = block.get(key, default)
    if isinstance(value, bool):
        return value
    problems.append(f"{path}{key}: expected true or false")
    return default


def _reject_unknown(block: Mapping, path: str, allowed, problems: List[str]) -> None:
    for key in sorted(set(block) - set(allowed)):
        problems.append(f"{path}{key}: unknown key")


def _dataclass_kwargs(
    block: Mapping, path: str, cls, banned: Mapping[str, str], problems: List[str]
) -> dict:
    """Pass-through keys for ``cls`` with banned keys explained, not echoed."""
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in block.items():
        if key in banned:
            problems.append(f"{path}{key}: not allowed ({banned[key]})")
        elif key not in names:
            problems.append(f"{path}{key}: unknown key")
        else:
            kwargs[key] = tuple(value) if isinstance(value, list) else value
    return kwargs


def _parse_centers(entries, problems: List[str]) -> Optional[Tuple[CenterSpec, ...]]:
    if not isinstance(entries, list) or not entries:
        problems.append("world.centers: expected a non-empty list of objects")
        return None
    centers = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or set(entry) != {"name", "weight", "offset"}:
            problems.append(
                f"world.centers[{i}]: expected exactly the keys name, weight, offset"
            )
            return None
        centers.append(
            CenterSpec(str(entry["name"]), float(entry["weight"]), float(entry["offset"]))
        )
    return tuple(centers)


def _parse_models(payload: Mapping, problems: List[str]) -> Tuple[ModelSpec, ...]:
    value = payload.get("models", "table1")
    if value == "table1":
        return table1_models()
    if not isinstance(value, list) or not value:
        problems.append('models: expected "table1" or a non-empty list of model names')
        return ()
    specs = []
    for i, name in enumerate(value):
        try:
            specs.append(ModelSpec.from_name(str(name)))
        except UsageError as err:
            problems.append(f"models[{i}]: {err}")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        problems.append("models: duplicate model names")
    return tuple(specs)


def load_run_config(path: str, command: str) -> RunConfig:
    """Parse and validate a config file for one command.

    All problems are collected and raised together as one ConfigError, each
    line naming the offending field. Path checks depend on the command:
    simulate creates the world, so only its layout is constrained; every
    other command requires the cohort CSV (and, when it reads volumes, the
    image root) to exist.
    """
    if command not in COMMANDS:
        raise UsageError(f"unknown command {command!r}")
    try:
        payload = load_json(path)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}")
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a JSON object")

    problems: List[str] = []
    _reject_unknown(
        payload, "",
        ("schema", "seed", "paths", "pipeline", "selection", "split_plan",
         "models", "world", "export"),
        problems,
    )
    if payload.get("schema") != CONFIG_SCHEMA:
        problems.append(f"schema: expected {CONFIG_SCHEMA!r}")
    seed = _require_int(payload, "", "seed", problems)
    if seed is not None and seed < 0:
        problems.append("seed: must be non-negative")
        seed = None

    paths = _block(payload, "paths", problems)
    _reject_unknown(paths, "paths.", ("cohort_csv", "image_root", "output_dir"), problems)
    raw_paths: Dict[str, str] = {}
    for key in ("cohort_csv", "image_root", "output_dir"):
        value = paths.get(key)
        if key == "output_dir" and os.environ.get(OUTPUT_DIR_ENV):
            value = os.environ[OUTPUT_DIR_ENV]
        if not isinstance(value, str) or not value:
            problems.append(f"paths.{key}: required path is missing")
            value = "."
        raw_paths[key] = value
    config_dir = os.path.dirname(os.path.abspath(path))
    resolved = {
        key: value if os.path.isabs(value) else os.path.join(config_dir, value)
        for key, value in raw_paths.items()
    }

    pipeline = _block(payload, "pipeline", problems)
    _reject_unknown(pipeline, "pipeline.", ("smote", "combat"), problems)
    smote = _opt_bool(pipeline, "pipeline.", "smote", False, problems)
    combat = _opt_bool(pipeline, "pipeline.", "combat", True, problems)

    selection = SelectionConfig(smote=smote)
    kwargs = _dataclass_kwargs(
        _block(payload, "selection", problems), "selection.", SelectionConfig,
        {"seed": "derived from the master seed",
         "smote": "set pipeline.smote instead"},
        problems,
    )
    try:
        selection = SelectionConfig(smote=smote, **kwargs)
    except (ConfigError, UsageError, TypeError) as err:
        problems.append(f"selection: {err}")

    plan = SplitPlan()
    kwargs = _dataclass_kwargs(
        _block(payload, "split_plan", problems), "split_plan.", SplitPlan,
        {"seed": "the master seed is used"}, problems,
    )
    if seed is not None:
        try:
            plan = SplitPlan(seed=seed, **kwargs)
        except (ConfigError, UsageError, TypeError) as err:
            problems.append(f"split_plan: {err}")

    models = _parse_models(payload, problems)

    world = None
    world_block = _block(payload, "world", problems)
    if world_block:
        centers = world_block.pop("centers", None)
        kwargs = _dataclass_kwargs(
            world_block, "world.", WorldSpec,
            {"seed": "the master seed is used", "centers": "handled separately"},
            problems,
        )
        if centers is not None:
            parsed = _parse_centers(centers, problems)
            if parsed is not None:
                kwargs["centers"] = parsed
        if "n" not in kwargs:
            problems.append("world.n: required to describe a world")
        elif seed is not None:
            try:
                world = WorldSpec(seed=seed, **kwargs)
            except (ConfigError, UsageError, TypeError) as err:
                problems.append(f"world: {err}")

    export = _block(payload, "export", problems)
    _reject_unknown(export, "export.", ("grid_size", "grid_spacing"), problems)
    grid = export.get("grid_size", 160)
    spacing = export.get("grid_spacing", 1.2875)
    if not isinstance(grid, int) or isinstance(grid, bool) or grid < 8:
        problems.append("export.grid_size: expected an integer of at least 8")
        grid = 160
    if not isinstance(spacing, (int, float)) or isinstance(spacing, bool) or spacing <= 0:
        problems.append("export.grid_spacing: expected a positive number")
        spacing = 1.2875

    # Command-conditional checks.
    if command == "simulate":
        if world is None and not any(p.startswith("world") for p in problems):
            problems.append("world: required for simulate (at least world.n)")
        if os.path.basename(resolved["cohort_csv"]) != "cohort.csv":
            problems.append("paths.cohort_csv: simulate writes <world dir>/cohort.csv")
        expected_images = os.path.join(os.path.dirname(resolved["cohort_csv"]), "images")
        if os.path.normpath(resolved["image_root"]) != os.path.normpath(expected_images):
            problems.append(
                "paths.image_root: simulate writes images next to the cohort CSV; "
                f"expected {expected_images}"
            )
    else:
        if not os.path.isfile(resolved["cohort_csv"]):
            problems.append(f"paths.cohort_csv: file not found: {resolved['cohort_csv']}")
        if command in ("extract", "export-dl") and not os.path.isdir(resolved["image_root"]):
            problems.append(f"paths.image_root: directory not found: {resolved['image_root']}")
    if command == "harmonize" and not combat:
        problems.append("pipeline.combat: must be true to run harmonize")
    if command in ("select", "train") and models and not any(s.image for s in models):
        problems.append(f"models: no configured model uses image features; {command} has nothing to do")

    if problems:
        raise ConfigError("invalid config:\n  " + "\n  ".join(problems))
    return RunConfig(
        seed=seed, cohort_csv=resolved["cohort_csv"], image_root=resolved["image_root"],
        output_dir=resolved["output_dir"], smote=smote, combat=combat,
        selection=selection, plan=plan, models=models, world=world,
        export_grid=grid, export_spacing=float(spacing), raw_paths=raw_paths,
    )


# ---------------------------------------------------------------------------
# Stage bookkeeping


def _stage_dir(cfg: RunConfig, command: str) -> str:
    if command == "simulate":
        return os.path.dirname(cfg.cohort_csv)
    return os.path.join(cfg.output_dir, _STAGE_DIRS[command])


def _selection_dict(sel: SelectionConfig) -> dict:
    # seed is derived per use and smote lives under pipeline, so neither
    # belongs in the hashed slice.
    payload = {f.name: getattr(sel, f.name) for f in fields(sel)}
    payload.pop("seed")
    payload.pop("smote")
    payload["f_grid"] = list(payload["f_grid"])
    return payload


def _consumed(cfg: RunConfig, command: str) -> dict:
    """The config slice a command actually reads, in hashable form."""
    base = {
        "schema": CONFIG_SCHEMA,
        "command": command,
        "seed": cfg.seed,
        "paths": {
            "cohort_csv": cfg.raw_paths["cohort_csv"],
            "image_root": cfg.raw_paths["image_root"],
        },
    }
    if command == "simulate":
        base["world"] = cfg.world.to_dict()
    elif command == "harmonize":
        base["combat"] = cfg.combat
    elif command in ("select", "train", "evaluate"):
        base["pipeline"] = {"smote": cfg.smote, "combat": cfg.combat}
        base["selection"] = _selection_dict(cfg.selection)
        base["plan"] = cfg.plan.to_dict()
        if command == "select":
            base["subsets"] = sorted({s.subset for s in cfg.models if s.image})
        else:
            base["models"] = [s.name for s in cfg.models]
    elif command == "export-dl":
        base["export"] = {"grid_size": cfg.export_grid, "grid_spacing": cfg.export_spacing}
    return base


def _stage_hash(cfg: RunConfig, command: str) -> str:
    return config_hash(_consumed(cfg, command))


@dataclass
class _Stage:
    command: str
    path: str
    hash: str
    inputs: Mapping[str, str]
    done: bool
    resume: bool


def _write_meta(stage: _Stage, cfg: RunConfig, complete: bool) -> None:
    dump_json(
        {
            "schema": META_SCHEMA,
            "command": stage.command,
            "config_hash": stage.hash,
            "seed": cfg.seed,
            "inputs": dict(stage.inputs),
            "complete": complete,
        },
        os.path.join(stage.path, "meta.json"),
    )


def _prepare_stage(
    cfg: RunConfig,
    command: str,
    inputs: Mapping[str, str],
    *,
    resume: bool,
    overwrite: bool,
) -> _Stage:
    """Decide fresh / resume / done / refuse for one stage directory."""
    path = _stage_dir(cfg, command)
    stage = _Stage(command, path, _stage_hash(cfg, command), inputs, False, False)
    meta_path = os.path.join(path, "meta.json")
    if os.path.isdir(path):
        if not os.path.exists(meta_path):
            if os.listdir(path):
                raise UsageError(
                    f"{command}: {path} contains files this tool does not manage; "
                    "refusing to touch them"
                )
        else:
            try:
                meta = load_json(meta_path)
            except (json.JSONDecodeError, OSError):
                meta = None
            if not isinstance(meta, dict):
                if not overwrite:
                    raise UsageError(
                        f"{command}: unreadable metadata in {path}; pass --overwrite to rebuild"
                    )
                meta = {}
            same = (
                meta.get("command") == command
                and meta.get("config_hash") == stage.hash
                and meta.get("inputs", {}) == dict(inputs)
            )
            if same and meta.get("complete"):
                stage.done = True
                return stage
            if same and meta:
                if resume and command in _RESUMABLE:
                    stage.resume = True
                elif not overwrite:
                    hint = (
                        "pass --resume to continue it or --overwrite to rebuild"
                        if command in _RESUMABLE
                        else "pass --overwrite to rebuild"
                    )
                    raise UsageError(f"{command}: found a partial run in {path}; {hint}")
            elif meta:
                if resume:
                    raise UsageError(
                        f"{command}: refusing to resume in {path}: its artifacts were "
                        "produced under a different config"
                    )
                if not overwrite:
                    raise UsageError(
                        f"{command}: {path} holds artifacts from a different config; "
                        "pass --overwrite to rebuild"
                    )
            if not stage.resume and os.path.exists(meta_path):
                shutil.rmtree(path)
    os.makedirs(path, exist_ok=True)
    _write_meta(stage, cfg, complete=False)
    return stage


def _require_stage(cfg: RunConfig, command: str, needed_by: str) -> str:
    """Verify an upstream stage is complete under the current config."""
    path = _stage_dir(cfg, command)
    expected = _stage_hash(cfg, command)
    meta_path = os.path.join(path, "meta.json")
    if not os.path.exists(meta_path):
        raise UsageError(f"{needed_by}: run `{command}` first ({path} has no artifacts)")
    meta = load_json(meta_path)
    if not meta.get("complete"):
        raise UsageError(f"{needed_by}: the `{command}` stage in {path} is incomplete")
    if meta.get("config_hash") != expected:
        raise UsageError(
            f"{needed_by}: the `{command}` artifacts in {path} were produced under a "
            f"different config; rerun `{command}`"
        )
    return expected


def _features_source(cfg: RunConfig) -> Tuple[str, str]:
    """Which stage feeds the modeling commands, and its CSV path."""
    if cfg.combat:
        return "harmonize", os.path.join(_stage_dir(cfg, "harmonize"), "features_harmonized.csv")
    return "extract", os.path.join(_stage_dir(cfg, "extract"), "features.csv")


def _atomic_json(payload: dict, path: str) -> None:
    tmp = path + ".tmp"
    dump_json(payload, tmp)
    os.replace(tmp, path)


def _atomic_npy(arr: np.ndarray, path: str) -> None:
    # np.save appends .npy to suffix-less paths, so the tmp name keeps it.
    tmp = path + ".tmp.npy"
    np.save(tmp, arr)
    os.replace(tmp, path)


def _model_payload(model: Optional[PrognosticModel]) -> Optional[dict]:
    if model is None:
        return None
    return {
        "kind": model.kind,
        "features": list(model.features),
        "coefficients": {k: float(v) for k, v in model.coefficients.items()},
        "intercept": None if model.intercept is None else float(model.intercept),
        "alpha": float(model.alpha),
        "lam": float(model.lam),
        "n_train": len(model.training_ids),
    }


# ---------------------------------------------------------------------------
# Commands


def _cmd_simulate(cfg: RunConfig, jobs: int, stage: _Stage) -> str:
    frame = generate_cohort(cfg.world, stage.path, n_jobs=jobs)
    return f"wrote {len(frame)} patients under {stage.path}"


def _extract_one(image_root: str, patient_id: str, rows_dir: str) -> None:
    contrasts, seg = read_patient_volumes(image_root, patient_id)
    result = extract_patient_features(contrasts, seg)
    _atomic_json(
        {
            "patient_id": patient_id,
            "excluded": result.excluded,
            "reason": result.reason,
            "features": result.features,
        },
        os.path.join(rows_dir, f"{patient_id}.json"),
    )


def _cmd_extract(cfg: RunConfig, jobs: int, stage: _Stage) -> str:
    cohort = load_cohort_csv(cfg.cohort_csv)
    rows_dir = os.path.join(stage.path, "rows")
    os.makedirs(rows_dir, exist_ok=True)
    patient_ids = list(cohort["patient_id"])

    todo = patient_ids
    if stage.resume:
        todo = [
            pid for pid in patient_ids
            if not os.path.exists(os.path.join(rows_dir, f"{pid}.json"))
        ]
    Parallel(n_jobs=jobs)(
        delayed(_extract_one)(cfg.image_root, pid, rows_dir) for pid in todo
    )

    names = full_feature_names()
    rows, excluded = [], {}
    for pid in patient_ids:
        row = load_json(os.path.join(rows_dir, f"{pid}.json"))
        if row["excluded"]:
            excluded[pid] = row["reason"]
            continue
        rows.append({"patient_id": pid, **{k: row["features"][k] for k in names}})
    frame = pd.DataFrame(rows, columns=["patient_id", *names])
    frame.to_csv(os.path.join(stage.path, "features.csv"), index=False)
    dump_json(excluded, os.path.join(stage.path, "excluded.json"))
    done = f"extracted {len(frame)} patients x {len(names)} features"
    if excluded:
        done += f" ({len(excluded)} excluded)"
    return done


def _cmd_harmonize(cfg: RunConfig, stage: _Stage) -> str:
    features_csv = os.path.join(_stage_dir(cfg, "extract"), "features.csv")
    cohort = load_cohort_csv(cfg.cohort_csv)
    features = pd.read_csv(features_csv, dtype={"patient_id": str})
    table = FeatureTable.from_cohort_and_features(cohort, features)
    harmonized = combat_harmonize(table)
    out = harmonized.frame[["patient_id", *harmonized.feature_columns]]
    out.to_csv(os.path.join(stage.path, "features_harmonized.csv"), index=False)
    n_batches = cohort["center"].nunique()
    return f"harmonized {len(out)} patients across {n_batches} centers"


def _load_modeling_table(cfg: RunConfig, features_csv: str) -> FeatureTable:
    cohort = load_cohort_csv(cfg.cohort_csv)
    features = pd.read_csv(features_csv, dtype={"patient_id": str})
    return FeatureTable.from_cohort_and_features(cohort, features)


def _train_rows_mask(table: FeatureTable, cfg: RunConfig, subset: str) -> np.ndarray:
    frame = table.frame
    return (
        subset_mask(frame, subset)
        & frame["center"].isin(cfg.plan.train_centers).to_numpy()
        & (frame["survival_6m"] != "unknown").to_numpy()
    )


def _cmd_select(cfg: RunConfig, jobs: int, stage: _Stage) -> str:
    _, features_csv = _features_source(cfg)
    table = _load_modeling_table(cfg, features_csv)
    frame = table.frame
    ext_ids = tuple(frame.loc[frame["center"].isin(cfg.plan.ext_centers), "patient_id"])
    subsets = sorted({s.subset for s in cfg.models if s.image})
    summaries = []
    for subset in subsets:
        rows = frame.loc[_train_rows_mask(table, cfg, subset)]
        X = rows[list(table.feature_columns)].to_numpy(dtype=np.float64)
        y = (rows["survival_6m"] == "<=6m").to_numpy(dtype=np.float64)
        sel = replace(cfg.selection, seed=derive_seed(cfg.seed, "cli", "select", subset))
        budget = optimize_feature_budget(
            X, y=y, cfg=sel, feature_names=table.feature_columns,
            row_ids=tuple(rows["patient_id"]), test_ids=ext_ids, n_jobs=jobs,
        )
        best = budget.best
        dump_json(
            {
                "schema": META_SCHEMA,
                "config_hash": stage.hash,
                "seed": sel.seed,
                "subset": subset,
                "best_f": budget.best_f,
                "selected": list(best.selected),
                "frequencies": {k: float(v) for k, v in best.frequencies.items()},
                "mean_refit_scores": {
                    str(f): float(v) for f, v in budget.mean_refit_scores().items()
                },
                "n_rows": int(len(rows)),
            },
            os.path.join(stage.path, f"{subset}.json"),
        )
        summaries.append(f"{subset}: f={budget.best_f}, {len(best.selected)} features")
    return "; ".join(summaries)


def _cmd_train(cfg: RunConfig, stage: _Stage) -> str:
    _, features_csv = _features_source(cfg)
    table = _load_modeling_table(cfg, features_csv)
    frame = table.frame
    feature_names = table.feature_columns
    name_to_col = {n: j for j, n in enumerate(feature_names)}
    ext_ids = tuple(frame.loc[frame["center"].isin(cfg.plan.ext_centers), "patient_id"])

    trained = []
    for spec in cfg.models:
        mask = subset_mask(frame, spec.subset) & (frame["survival_6m"] != "unknown").to_numpy()
        clin = frame.loc[mask].reset_index(drop=True)
        y = (clin["survival_6m"] == "<=6m").to_numpy(dtype=np.float64)
        feats = clin[list(feature_names)].to_numpy(dtype=np.float64)
        fit_idx = np.flatnonzero(clin["center"].isin(cfg.plan.train_centers).to_numpy())

        selected: Tuple[str, ...] = ()
        if spec.image:
            chosen = load_json(os.path.join(_stage_dir(cfg, "select"), f"{spec.subset}.json"))
            selected = tuple(chosen["selected"])
        seed = derive_seed(cfg.seed, "cli", "train", spec.name)
        model = _fit_spec_model(
            spec, selected, feats, name_to_col, clin, y, fit_idx, ext_ids,
            smote=cfg.smote, seed=seed,
        )
        cut = youden_threshold(model.predict(feats, clin, fit_idx), y[fit_idx])
        dump_json(
            {
                "schema": META_SCHEMA,
                "config_hash": stage.hash,
                "seed": seed,
                "model": spec.name,
                "spec": spec.to_dict(),
                "selected": list(selected),
                "image_model": _model_payload(model.image_model),
                "fusion_head": _model_payload(model.head),
                "youden_threshold": float(cut.threshold),
                "n_train": int(len(fit_idx)),
            },
            os.path.join(stage.path, f"{spec.name}.json"),
        )
        trained.append(spec.name)
    return f"trained {len(trained)} models: {', '.join(trained)}"


def _cmd_evaluate(cfg: RunConfig, jobs: int, stage: _Stage) -> str:
    needs_features = any(s.image for s in cfg.models)
    features = None
    if needs_features:
        _, features_csv = _features_source(cfg)
        # The protocol wants features keyed by patient_id, names as columns.
        features = pd.read_csv(features_csv, dtype={"patient_id": str}).set_index("patient_id")
    cohort = load_cohort_csv(cfg.cohort_csv)

    details_dir = os.path.join(stage.path, "details")
    os.makedirs(details_dir, exist_ok=True)
    evaluations, ext_results = [], {}
    for spec in cfg.models:
        sel = replace(cfg.selection, seed=derive_seed(cfg.seed, "cli", "evaluate", spec.name))
        evaluation = statistical_evaluation(
            features, cohort, spec, cfg.plan, selection=sel, n_jobs=jobs,
        )
        ext = finalize_external_test(features, cohort, evaluation)
        evaluations.append(evaluation)
        ext_results[spec.name] = ext
        dump_json(
            {
                "schema": META_SCHEMA,
                "config_hash": stage.hash,
                "seed": cfg.seed,
                "model": spec.name,
                "cv_scores": [float(s) for s in evaluation.cv_scores],
                "internal_scores": [float(s) for s in evaluation.internal_scores],
                "external": ext.to_dict(),
            },
            os.path.join(details_dir, f"{spec.name}.json"),
        )

    report = assemble_report(evaluations, ext_results, cohort)
    with open(os.path.join(stage.path, "report.json"), "w") as fh:
        fh.write(report.to_json() + "\n")
    print(report_table(report), end="")
    return f"evaluated {len(evaluations)} models over {cfg.plan.n_repetitions} repetitions"


def _render_report(payload: Mapping) -> str:
    lines = [report_table(payload).rstrip("\n")]
    if payload["comparisons"]:
        lines += ["", "Within-subset comparisons (paired permutation on internal estimates)"]
        for c in payload["comparisons"]:
            lines.append(f"  {c['model_a']} vs {c['model_b']}: p={c['p_value']:.4f}")
    if payload["balance"]:
        lines += ["", "TrainEval vs ExtTest balance p-values"]
        for subset in sorted(payload["balance"]):
            tests = payload["balance"][subset]
            joined = "  ".join(f"{k}={tests[k]:.3f}" for k in sorted(tests))
            lines.append(f"  {subset}: {joined}")
    return "\n".join(lines) + "\n"


def _cmd_report(cfg: RunConfig, stage: _Stage) -> str:
    payload = load_json(os.path.join(_stage_dir(cfg, "evaluate"), "report.json"))
    text = _render_report(payload)
    with open(os.path.join(stage.path, "report.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")
    return f"rendered {len(payload['models'])} model rows"


def _export_one(
    image_root: str, patient_id: str, out_dir: str, grid: int, spacing: float
) -> None:
    contrasts, seg = read_patient_volumes(image_root, patient_id)
    vols = {}
    for mod in MODALITIES:
        vols[mod], _ = zscore_standardize(contrasts[mod], seg)
    label_map = (
        seg.edema.voxels.astype(np.int16)
        + 2 * seg.et.voxels.astype(np.int16)
        + 3 * seg.net.voxels.astype(np.int16)
    )
    vols["seg"] = seg.edema.with_voxels(label_map, kind="label")
    _, cropped = crop_to_brain_fov(
        vols, [seg.brain], grid_size=grid, grid_spacing=spacing,
    )
    image = np.stack([cropped[m].voxels for m in MODALITIES]).astype(np.float32)
    labels = np.rint(cropped["seg"].voxels).astype(np.uint8)
    _atomic_npy(image, os.path.join(out_dir, f"{patient_id}.npy"))
    _atomic_npy(labels, os.path.join(out_dir, f"{patient_id}_seg.npy"))


def _cmd_export_dl(cfg: RunConfig, jobs: int, stage: _Stage) -> str:
    cohort = load_cohort_csv(cfg.cohort_csv)
    rows = cohort.loc[cohort["survival_6m"] != "unknown"].reset_index(drop=True)
    patient_ids = list(rows["patient_id"])

    todo = patient_ids
    if stage.resume:
        todo = [
            pid for pid in patient_ids
            if not (
                os.path.exists(os.path.join(stage.path, f"{pid}.npy"))
                and os.path.exists(os.path.join(stage.path, f"{pid}_seg.npy"))
            )
        ]
    Parallel(n_jobs=jobs)(
        delayed(_export_one)(
            cfg.image_root, pid, stage.path, cfg.export_grid, cfg.export_spacing,
        )
        for pid in todo
    )

    labels = rows[["patient_id", "center", "age", "sex", "mgmt", "idh", "os_days", "event"]].copy()
    labels.insert(2, "label", (rows["survival_6m"] == "<=6m").astype(int))
    labels.to_csv(os.path.join(stage.path, "labels.csv"), index=False)
    dump_json(
        {
            "schema": META_SCHEMA,
            "config_hash": stage.hash,
            "seed": cfg.seed,
            "channels": list(MODALITIES),
            "segmentation_labels": {str(k): v for k, v in _SEG_LABELS.items()},
            "grid_size": cfg.export_grid,
            "grid_spacing": cfg.export_spacing,
            "n_patients": int(len(labels)),
        },
        os.path.join(stage.path, "manifest.json"),
    )
    return f"exported {len(labels)} patients at {cfg.export_grid}^3"


# ---------------------------------------------------------------------------
# Driver


def run(
    command: str,
    config: Union[str, RunConfig],
    *,
    jobs: Optional[int] = None,
    resume: bool = False,
    overwrite: bool = False,
) -> int:
    """Execute one subcommand; returns the process exit status."""
    cfg = load_run_config(config, command) if isinstance(config, str) else config
    if command not in COMMANDS:
        raise UsageError(f"unknown command {command!r}")
    if jobs is None:
        jobs = os.cpu_count() or 1
    if jobs < 1:
        raise UsageError("--jobs must be at least 1")

    inputs: Dict[str, str] = {}
    if command == "harmonize":
        inputs["extract"] = _require_stage(cfg, "extract", command)
    elif command in ("select", "train", "evaluate"):
        uses_images = any(s.image for s in cfg.models)
        if uses_images:
            src_cmd, _ = _features_source(cfg)
            inputs[src_cmd] = _require_stage(cfg, src_cmd, command)
        if command == "train" and uses_images:
            inputs["select"] = _require_stage(cfg, "select", command)
    elif command == "report":
        inputs["evaluate"] = _require_stage(cfg, "evaluate", command)

    stage = _prepare_stage(cfg, command, inputs, resume=resume, overwrite=overwrite)
    if stage.done:
        print(f"{command}: up to date ({stage.path})")
        return 0

    if command == "simulate":
        summary = _cmd_simulate(cfg, jobs, stage)
    elif command == "extract":
        summary = _cmd_extract(cfg, jobs, stage)
    elif command == "harmonize":
        summary = _cmd_harmonize(cfg, stage)
    elif command == "select":
        summary = _cmd_select(cfg, jobs, stage)
    elif command == "train":
        summary = _cmd_train(cfg, stage)
    elif command == "evaluate":
        summary = _cmd_evaluate(cfg, jobs, stage)
    elif command == "report":
        summary = _cmd_report(cfg, stage)
    else:
        summary = _cmd_export_dl(cfg, jobs, stage)

    _write_meta(stage, cfg, complete=True)
    print(f"{command}: {summary}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gliorad",
        description="Survival-prognosis radiomics pipeline driver.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="path to a run config JSON")
    parser.add_argument(
        "--jobs", type=int, default=None,
        help="parallel worker cap (default: logical cores)",
    )
    group = parser.add_mutually_exclusive_group()
    group.add_argument(
        "--resume", action="store_true",
        help="continue a partial run of a resumable stage",
    )
    group.add_argument(
        "--overwrite", action="store_true",
        help="discard a stage's prior artifacts and rebuild",
    )
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return run(
            args.command, args.config,
            jobs=args.jobs, resume=args.resume, overwrite=args.overwrite,
        )
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except GlioradError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
