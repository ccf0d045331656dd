import numpy as np
import pandas as pd
import pytest
import torch

from fusionnet import Sample, collate, encode_clinical, load_samples, upsample_minority


def _write_export(tmp_path, rows, side=10):
    rng = np.random.default_rng(0)
    for row in rows:
        contrasts = rng.normal(size=(4, side, side, side)).astype(np.float32)
        seg = np.zeros((side, side, side), dtype=np.uint8)
        seg[2:7, 2:7, 2:7] = 1
        seg[3:5, 3:5, 3:5] = 2
        np.save(tmp_path / f"{row['patient_id']}.npy", contrasts)
        np.save(tmp_path / f"{row['patient_id']}_seg.npy", seg)
    cohort = tmp_path / "cohort.csv"
    pd.DataFrame(rows).to_csv(cohort, index=False)
    return cohort


def _row(pid, outcome, **overrides):
    row = {
        "patient_id": pid, "center": "A", "age": 64.0, "sex": "female",
        "mgmt": "methylated", "idh": "wildtype", "survival_6m": outcome,
    }
    row.update(overrides)
    return row


def test_load_samples_builds_five_channel_images(tmp_path):
    cohort = _write_export(tmp_path, [
        _row("p02", ">6m"),
        _row("p01", "<=6m", age=74.0, sex="male", mgmt="unknown", idh="mutant"),
        _row("p03", "unknown"),
    ])
    samples = load_samples(str(tmp_path), str(cohort))
    assert [s.patient_id for s in samples] == ["p01", "p02"]  # unknown skipped, sorted
    s = samples[0]
    assert s.image.shape == (5, 10, 10, 10) and s.image.dtype == np.float32
    seg = np.load(tmp_path / "p01_seg.npy")
    assert np.array_equal(s.image[4], seg.astype(np.float32))
    assert s.label == 1 and samples[1].label == 0
    np.testing.assert_allclose(s.clinical, [1.0, 0.0, 0.5, 1.0])


def test_load_samples_requires_matching_tensors(tmp_path):
    cohort = _write_export(tmp_path, [_row("p01", ">6m")])
    (tmp_path / "p01_seg.npy").unlink()
    with pytest.raises(FileNotFoundError):
        load_samples(str(tmp_path), str(cohort))


def test_load_samples_rejects_shape_mismatch(tmp_path):
    cohort = _write_export(tmp_path, [_row("p01", ">6m")])
    np.save(tmp_path / "p01_seg.npy", np.zeros((4, 4, 4), dtype=np.uint8))
    with pytest.raises(ValueError):
        load_samples(str(tmp_path), str(cohort))


def test_load_samples_needs_at_least_one_known_outcome(tmp_path):
    cohort = _write_export(tmp_path, [_row("p01", "unknown")])
    with pytest.raises(ValueError):
        load_samples(str(tmp_path), str(cohort))


def test_encode_clinical_maps_categories():
    base = _row("p", ">6m")
    np.testing.assert_allclose(encode_clinical(base), [0.0, 1.0, 1.0, 0.0])
    decade = encode_clinical(_row("p", ">6m", age=54.0))
    assert decade[0] == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        encode_clinical(_row("p", ">6m", sex="other"))
    with pytest.raises(ValueError):
        encode_clinical(_row("p", ">6m", mgmt="maybe"))


def _toy_samples(labels):
    rng = np.random.default_rng(1)
    return [
        Sample(f"p{i}", rng.normal(size=(5, 4, 4, 4)).astype(np.float32),
               rng.normal(size=4).astype(np.float32), int(lab), "A")
        for i, lab in enumerate(labels)
    ]


def test_upsample_minority_balances_classes():
    samples = _toy_samples([0, 0, 0, 0, 0, 1, 1])
    out = upsample_minority(samples, seed=3)
    labels = [s.label for s in out]
    assert labels.count(0) == labels.count(1) == 5
    assert out[: len(samples)] == samples  # originals first, duplicates appended
    again = upsample_minority(samples, seed=3)
    assert [s.patient_id for s in again] == [s.patient_id for s in out]


def test_upsample_minority_leaves_single_class_alone():
    samples = _toy_samples([1, 1, 1])
    assert upsample_minority(samples, seed=0) == samples


def test_collate_stacks_tensors():
    samples = _toy_samples([0, 1, 1])
    images, clinical, labels = collate(samples)
    assert images.shape == (3, 5, 4, 4, 4) and images.dtype == torch.float32
    assert clinical.shape == (3, 4) and clinical.dtype == torch.float32
    assert labels.tolist() == [0, 1, 1] and labels.dtype == torch.long
