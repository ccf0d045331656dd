"""Repeated-split training with best-validation-epoch selection and ensembling.

Each split reshuffles the TrainEval samples into train/validation/internal
test (60-20-20 by default), upsamples the minority class in the training
fold only, and trains with cross-entropy, Adam, and warm-restart cosine
annealing. The checkpoint kept per split is the epoch with the best
validation AUC. External-test predictions are made per split model and
ensembled by averaging softmax probabilities. Determinism under a fixed
seed is best-effort (torch CPU kernels are deterministic in practice, but
this is not a bit-exactness contract).
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch.optim.lr_scheduler import CosineAnnealingWarmRestarts

from .augment import AugmentConfig, augment
from .data import Sample, collate, upsample_minority
from .model import FusionNet, FusionNetConfig, build_model


@dataclass(frozen=True)
class TrainConfig:
    """Protocol settings; optimizer settings live on FusionNetConfig."""

    n_splits: int = 10
    epochs: int = 50
    seed: int = 0
    train_fraction: float = 0.6
    val_fraction: float = 0.2
    upsample: bool = True

    def __post_init__(self) -> None:
        if self.n_splits < 1:
            raise ValueError("n_splits must be >= 1")
        if not 0.0 < self.train_fraction < 1.0 or not 0.0 < self.val_fraction < 1.0:
            raise ValueError("fractions must lie in (0, 1)")
        if self.train_fraction + self.val_fraction >= 1.0:
            raise ValueError("train and validation fractions leave no test fold")


@dataclass
class SplitResult:
    """One trained split: kept checkpoint and its bookkeeping."""

    split: int
    state_dict: dict
    best_epoch: int
    best_val_auc: float
    internal_auc: float
    train_ids: Tuple[str, ...]
    val_ids: Tuple[str, ...]
    test_ids: Tuple[str, ...]


@dataclass
class EnsembleResult:
    splits: List[SplitResult]
    per_model_ext_auc: Tuple[float, ...]
    ensemble_ext_auc: float
    ext_probabilities: np.ndarray
    ext_ids: Tuple[str, ...]


def rank_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC with tied scores counted half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUC needs both classes")
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return float(wins / (len(pos) * len(neg)))


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(entropy=tuple(parts)).generate_state(1)[0])


def predict_proba(model: FusionNet, samples: Sequence[Sample],
                  batch_size: int = 8) -> np.ndarray:
    """Positive-class softmax probabilities, eval mode, no gradients."""
    model.eval()
    probs = []
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            images, clinical, _ = collate(samples[start:start + batch_size])
            logits = model(images, clinical)
            probs.append(torch.softmax(logits, dim=1)[:, 1].numpy())
    return np.concatenate(probs)


def _score_or_neutral(scores: np.ndarray, labels: np.ndarray) -> float:
    if labels.min() == labels.max():
        return 0.5  # degenerate fold on tiny cohorts
    return rank_auc(scores, labels)


def _augmented(samples: Sequence[Sample], cfg: AugmentConfig, seed: int) -> List[Sample]:
    out = []
    for i, s in enumerate(samples):
        contrasts, seg = augment(
            s.image[:4], np.rint(s.image[4]).astype(np.int16), seed=_derived_seed(seed, i), cfg=cfg
        )
        image = np.concatenate([contrasts, seg[None]]).astype(np.float32)
        out.append(Sample(s.patient_id, image, s.clinical, s.label, s.center))
    return out


def train_split(
    samples: Sequence[Sample],
    split: int,
    cfg: TrainConfig,
    model_cfg: FusionNetConfig = FusionNetConfig(),
    augment_cfg: Optional[AugmentConfig] = None,
) -> SplitResult:
    rng = np.random.default_rng(_derived_seed(cfg.seed, split))
    order = rng.permutation(len(samples))
    n_train = max(1, int(round(cfg.train_fraction * len(samples))))
    n_val = max(1, int(round(cfg.val_fraction * len(samples))))
    if n_train + n_val >= len(samples):
        raise ValueError(f"{len(samples)} samples leave no test fold at these fractions")
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train:n_train + n_val]]
    test = [samples[i] for i in order[n_train + n_val:]]
    if cfg.upsample:
        train = upsample_minority(train, seed=_derived_seed(cfg.seed, split, 1))

    torch.manual_seed(_derived_seed(cfg.seed, split, 2))
    model = build_model(model_cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=model_cfg.lr)
    scheduler = CosineAnnealingWarmRestarts(
        optimizer, T_0=model_cfg.scheduler_t0, eta_min=model_cfg.scheduler_eta_min
    )
    loss_fn = torch.nn.CrossEntropyLoss()
    val_labels = np.array([s.label for s in val])

    best = (-1.0, 0, copy.deepcopy(model.state_dict()))
    for epoch in range(cfg.epochs):
        epoch_samples = (
            _augmented(train, augment_cfg, _derived_seed(cfg.seed, split, 3, epoch))
            if augment_cfg is not None else list(train)
        )
        epoch_rng = np.random.default_rng(_derived_seed(cfg.seed, split, 4, epoch))
        epoch_rng.shuffle(epoch_samples)
        model.train()
        for start in range(0, len(epoch_samples), model_cfg.batch_size):
            images, clinical, labels = collate(epoch_samples[start:start + model_cfg.batch_size])
            optimizer.zero_grad()
            loss = loss_fn(model(images, clinical), labels)
            loss.backward()
            optimizer.step()
        scheduler.step()
        val_auc = _score_or_neutral(predict_proba(model, val), val_labels)
        if val_auc > best[0]:
            best = (val_auc, epoch, copy.deepcopy(model.state_dict()))

    model.load_state_dict(best[2])
    internal = _score_or_neutral(
        predict_proba(model, test), np.array([s.label for s in test])
    )
    return SplitResult(
        split=split,
        state_dict=best[2],
        best_epoch=best[1],
        best_val_auc=best[0],
        internal_auc=internal,
        train_ids=tuple(s.patient_id for s in train),
        val_ids=tuple(s.patient_id for s in val),
        test_ids=tuple(s.patient_id for s in test),
    )


def ensemble_probabilities(models: Sequence[FusionNet],
                           samples: Sequence[Sample]) -> np.ndarray:
    """Mean positive-class probability across models."""
    if not models:
        raise ValueError("ensemble needs at least one model")
    return np.mean([predict_proba(m, samples) for m in models], axis=0)


def train_and_ensemble(
    traineval: Sequence[Sample],
    exttest: Sequence[Sample],
    cfg: TrainConfig = TrainConfig(),
    model_cfg: FusionNetConfig = FusionNetConfig(),
    augment_cfg: Optional[AugmentConfig] = None,
) -> EnsembleResult:
    if not exttest:
        raise ValueError("external test samples are required")
    splits = [
        train_split(traineval, s, cfg, model_cfg, augment_cfg)
        for s in range(cfg.n_splits)
    ]
    models = []
    for result in splits:
        model = build_model(model_cfg)
        model.load_state_dict(result.state_dict)
        models.append(model)
    ext_labels = np.array([s.label for s in exttest])
    per_model = tuple(
        _score_or_neutral(predict_proba(m, exttest), ext_labels) for m in models
    )
    probs = ensemble_probabilities(models, exttest)
    return EnsembleResult(
        splits=splits,
        per_model_ext_auc=per_model,
        ensemble_ext_auc=_score_or_neutral(probs, ext_labels),
        ext_probabilities=probs,
        ext_ids=tuple(s.patient_id for s in exttest),
    )
