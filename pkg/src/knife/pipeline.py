"""End-to-end training orchestration: teacher pre-training, student training
with distillation and alignment, and zero-calibration inference.

Datasets entering train_teacher / train_student are expected to be
preprocessed (band-passed and z-scored, see data.preprocess); the student
input path re-applies per-trial z-scoring so spectrally-transferred trials are
normalized exactly like originals. The teacher consumes per-channel phase
spectra. All randomness derives from the config seed through fixed stream
tags, so a (config, datasets) pair fully determines both checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffengine as de
from . import fourier, model
from .data import DomainDataset, zscore_batch
from .diffengine import ModelParams, SgdState, Tensor
from .errors import (
    ConfigurationError,
    InvalidConfigError,
    InvalidDatasetError,
    InvalidInputError,
    NumericError,
    TrainingDivergedError,
)
from .losses import LossWeights, coral_align, cross_entropy, mse_distill, total_student_loss
from .model import BackboneConfig

__all__ = [
    "TrainConfig",
    "Checkpoint",
    "Batch",
    "split_train_val",
    "make_batches",
    "augment_batch",
    "draw_alpha",
    "train_teacher",
    "train_student",
    "predict",
    "parse_config_text",
    "config_from_mapping",
    "config_to_text",
]

# Stream tags keeping the different random consumers on disjoint substreams.
_TAG_SPLIT, _TAG_TEACHER_INIT, _TAG_STUDENT_INIT, _TAG_BATCH, _TAG_AUG = 1, 2, 3, 4, 5


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, *tags])


def draw_alpha(policy: str, rng: np.random.Generator) -> float:
    """Swap-band strength per the policy: 'uniform' or 'fixed:<value>'."""
    if policy == "uniform":
        return max(float(rng.uniform(0.0, 0.5)), 1e-9)
    if policy.startswith("fixed:"):
        value = float(policy.split(":", 1)[1])
        if not (0.0 < value < 0.5):
            raise InvalidConfigError(f"fixed alpha must be in (0, 0.5), got {value}")
        return value
    raise InvalidConfigError(f"unknown alpha_policy {policy!r}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    teacher_epochs: int | None = None  # None: same as epochs
    batch_size: int = 32
    base_lr: float = 0.02
    schedule: tuple = ((0.7, 0.1), (0.9, 0.1))
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    alpha_policy: str = "uniform"  # "uniform" or "fixed:<value>"
    distill_target: str = "phase-of-augmented"  # or "raw-augmented"
    augment: bool = False
    align: bool = False
    teacher_augment: bool = False
    val_fraction: float = 0.2
    band_lo_hz: float = 4.0
    band_hi_hz: float = 40.0

    def __post_init__(self):
        if not (0.0 < self.val_fraction < 1.0):
            raise InvalidConfigError(f"val_fraction must be in (0,1), got {self.val_fraction}")
        if self.epochs < 1:
            raise InvalidConfigError("epochs must be >= 1")
        if self.batch_size < 4 or self.batch_size % 2 != 0:
            raise InvalidConfigError("batch_size must be an even number >= 4")
        if self.distill_target not in ("phase-of-augmented", "raw-augmented"):
            raise InvalidConfigError(f"unknown distill_target {self.distill_target!r}")
        draw_alpha(self.alpha_policy, np.random.default_rng(0))


@dataclass
class Checkpoint:
    """Best-validation snapshot plus the trace needed to audit the run."""

    params: ModelParams
    val_accuracy: float
    epoch: int
    backbone: BackboneConfig
    metrics: list = field(default_factory=list)
    audit_domains: list = field(default_factory=list)
    skipped_augmentations: int = 0


# ------------------------------------------------------------------ splitting


def split_train_val(datasets, val_fraction: float, seed: int):
    """Stratified per-domain, per-class split into (train, val) dataset lists."""
    if not (0.0 < val_fraction < 1.0):
        raise InvalidConfigError(f"val_fraction must be in (0,1), got {val_fraction}")
    rng = _rng(seed, _TAG_SPLIT)
    train_sets, val_sets = [], []
    for ds in datasets:
        if ds.n_trials < 5:
            raise InvalidDatasetError(f"domain {ds.domain_id} has < 5 trials")
        train_idx, val_idx = [], []
        for c in range(ds.n_classes):
            members = np.flatnonzero(ds.labels == c)
            if members.size < 2:
                raise InvalidDatasetError(
                    f"domain {ds.domain_id} class {c} has {members.size} trials; cannot stratify"
                )
            members = members[rng.permutation(members.size)]
            n_val = int(round(members.size * val_fraction))
            n_val = min(max(n_val, 1), members.size - 1)
            val_idx.extend(members[:n_val])
            train_idx.extend(members[n_val:])
        train_sets.append(ds.subset(np.sort(train_idx)))
        val_sets.append(ds.subset(np.sort(val_idx)))
    return train_sets, val_sets


# ------------------------------------------------------------------- batching


@dataclass
class Batch:
    trials: np.ndarray  # (B, n, m)
    labels: np.ndarray  # (B,)
    domains: np.ndarray  # (B,) integer index into domain_ids
    domain_ids: list  # index -> domain_id string


def make_batches(train, batch_size: int, seed: int, epoch: int) -> list:
    """Fixed-size batches where every represented domain contributes >= 2
    samples and at least two domains appear; the ragged tail is dropped.

    Samples are drawn two at a time from per-domain shuffled queues in
    round-robin order, which also balances domain representation.
    """
    if len(train) < 2:
        raise ConfigurationError("batching requires at least two training domains")
    if batch_size % 2 != 0 or batch_size < 4:
        raise ConfigurationError("batch_size must be an even number >= 4")
    rng = _rng(seed, _TAG_BATCH, epoch)
    domain_ids = [ds.domain_id for ds in train]
    queues = [list(rng.permutation(ds.n_trials)) for ds in train]
    batches = []
    cursor = 0
    n_domains = len(train)
    while True:
        picks = []  # (domain_index, trial_index)
        misses = 0
        while len(picks) < batch_size and misses < n_domains:
            d = cursor % n_domains
            cursor += 1
            if len(queues[d]) >= 2:
                picks.append((d, queues[d].pop()))
                picks.append((d, queues[d].pop()))
                misses = 0
            else:
                misses += 1
        if len(picks) < batch_size or len({d for d, _ in picks}) < 2:
            break
        trials = np.stack([train[d].trials[i] for d, i in picks])
        labels = np.array([train[d].labels[i] for d, i in picks], dtype=np.int64)
        domains = np.array([d for d, _ in picks], dtype=np.int64)
        batches.append(Batch(trials, labels, domains, domain_ids))
    return batches


# ----------------------------------------------------------------- augmenting


def augment_batch(batch: Batch, alpha_policy: str, rng: np.random.Generator):
    """Originals plus spectrally-transferred cross-domain pairs.

    Pairs are drawn without replacement between distinct domains; each pair
    emits two augmented trials carrying the label and domain of their phase
    donor. Returns (batch, n_unpaired); a single-domain batch comes back
    unchanged with every sample counted as unpaired.
    """
    pool = list(rng.permutation(len(batch.labels)))
    pairs = []
    while len(pool) >= 2:
        u = pool.pop(0)
        partner_pos = next(
            (i for i, v in enumerate(pool) if batch.domains[v] != batch.domains[u]), None
        )
        if partner_pos is None:
            pool.insert(0, u)
            break
        pairs.append((u, pool.pop(partner_pos)))
    n_unpaired = len(batch.labels) - 2 * len(pairs)
    if not pairs:
        return batch, n_unpaired
    alphas = np.array([draw_alpha(alpha_policy, rng) for _ in pairs])
    us = np.array([u for u, _ in pairs])
    vs = np.array([v for _, v in pairs])
    aug_u, aug_v = fourier.spectral_transfer_batch(batch.trials[us], batch.trials[vs], alphas)
    trials = np.concatenate([batch.trials, aug_u, aug_v])
    labels = np.concatenate([batch.labels, batch.labels[us], batch.labels[vs]])
    domains = np.concatenate([batch.domains, batch.domains[us], batch.domains[vs]])
    return Batch(trials, labels, domains, batch.domain_ids), n_unpaired


# ------------------------------------------------------------------- training


def _with_trials(ds: DomainDataset, trials: np.ndarray) -> DomainDataset:
    return DomainDataset(
        domain_id=ds.domain_id,
        fs_hz=ds.fs_hz,
        trials=trials,
        labels=ds.labels.copy(),
        class_names=list(ds.class_names),
    )


def _accuracy_over(params, backbone, datasets, transform) -> float:
    correct = total = 0
    for ds in datasets:
        labels = model.predict_labels(params, backbone, transform(ds.trials))
        correct += int((labels == ds.labels).sum())
        total += ds.n_trials
    return correct / total


def _classifier_logits(params, feats):
    return de.add_bias(
        de.matmul(feats, params.tensors["classifier.w"]), params.tensors["classifier.b"]
    )


def train_teacher(train, val, config: TrainConfig, backbone: BackboneConfig) -> Checkpoint:
    """Cross-entropy training on per-channel phase spectra; best-val snapshot.

    By default the teacher sees phase of unaugmented trials; with
    config.teacher_augment the batch is spectrally transferred in signal space
    first and the phase taken afterwards.
    """
    epochs = config.teacher_epochs if config.teacher_epochs is not None else config.epochs
    init_seed = int(_rng(config.seed, _TAG_TEACHER_INIT).integers(2**32))
    params = model.build_network(backbone, seed=init_seed)
    state = SgdState(lr=config.base_lr, total_epochs=epochs, schedule=config.schedule)
    phase_val = [_with_trials(ds, model.phase_input_batch(ds.trials)) for ds in val]
    if config.teacher_augment:
        source = train
    else:
        source = [_with_trials(ds, model.phase_input_batch(ds.trials)) for ds in train]
    best = None
    metrics = []
    audit = sorted({ds.domain_id for ds in train})
    for epoch in range(epochs):
        state.epoch = epoch
        batches = make_batches(source, config.batch_size, config.seed, epoch)
        aug_rng = _rng(config.seed, _TAG_AUG, epoch)
        epoch_loss = 0.0
        try:
            for batch in batches:
                if config.teacher_augment:
                    batch, _ = augment_batch(batch, config.alpha_policy, aug_rng)
                    inputs = model.phase_input_batch(batch.trials)
                else:
                    inputs = batch.trials
                logits = model.forward_logits(params, backbone, inputs)
                loss = cross_entropy(logits, batch.labels)
                de.sgd_step(params, de.gradients(loss, params), state)
                epoch_loss += loss.item()
        except NumericError as exc:
            raise TrainingDivergedError(epoch, f"teacher diverged at epoch {epoch}: {exc}")
        val_acc = _accuracy_over(params, backbone, phase_val, lambda x: x)
        metrics.append(
            {
                "epoch": epoch,
                "lr": state.lr_effective(),
                "loss_cls": epoch_loss / max(1, len(batches)),
                "val_accuracy": val_acc,
            }
        )
        if best is None or val_acc > best.val_accuracy:
            best = Checkpoint(params.copy(), val_acc, epoch, backbone, metrics, audit)
    best.metrics = metrics
    return best


def train_student(
    train, val, teacher: Checkpoint | None, config: TrainConfig, backbone: BackboneConfig
) -> Checkpoint:
    """Distillation + alignment training of the student on raw signals.

    Per batch: optional spectral-transfer augmentation, classification loss on
    the (augmented) signal batch, feature MSE against the frozen teacher
    (phase-of-augmented by default), and pairwise covariance alignment over
    the batch's domain groups; SGD on the weighted total.
    """
    gamma1, gamma2 = config.weights.gamma1, config.weights.gamma2
    if gamma1 > 0:
        if teacher is None:
            raise InvalidInputError("distillation weight set but no teacher checkpoint given")
        if teacher.backbone != backbone:
            raise InvalidInputError("teacher and student backbone configurations differ")
    if config.align and config.batch_size < 2 * len(train):
        raise ConfigurationError(
            f"alignment needs batch_size >= 2 * n_domains = {2 * len(train)}"
        )
    init_seed = int(_rng(config.seed, _TAG_STUDENT_INIT).integers(2**32))
    params = model.build_network(backbone, seed=init_seed)
    state = SgdState(lr=config.base_lr, total_epochs=config.epochs, schedule=config.schedule)
    best = None
    metrics = []
    audit = sorted({ds.domain_id for ds in train})
    skipped = 0
    for epoch in range(config.epochs):
        state.epoch = epoch
        batches = make_batches(train, config.batch_size, config.seed, epoch)
        aug_rng = _rng(config.seed, _TAG_AUG, epoch)
        sums = {"loss_cls": 0.0, "loss_mse": 0.0, "loss_align": 0.0, "loss_total": 0.0}
        try:
            for batch in batches:
                if config.augment:
                    batch, n_unpaired = augment_batch(batch, config.alpha_policy, aug_rng)
                    skipped += n_unpaired
                inputs = zscore_batch(batch.trials)
                feats = model.forward_features(params, backbone, inputs)
                cls = cross_entropy(_classifier_logits(params, feats), batch.labels)
                if gamma1 > 0:
                    if config.distill_target == "phase-of-augmented":
                        teacher_in = model.phase_input_batch(batch.trials)
                    else:
                        teacher_in = inputs
                    with de.no_grad():
                        teacher_feats = model.forward_features(teacher.params, backbone, teacher_in)
                    mse_term = mse_distill(feats, teacher_feats.data)
                else:
                    mse_term = Tensor(0.0)
                if config.align and gamma2 > 0:
                    groups = [
                        np.flatnonzero(batch.domains == d) for d in np.unique(batch.domains)
                    ]
                    if len(groups) >= 2:
                        align_term = coral_align([de.take_rows(feats, idx) for idx in groups])
                    else:
                        align_term = Tensor(0.0)
                else:
                    align_term = Tensor(0.0)
                loss = total_student_loss(cls, mse_term, align_term, config.weights)
                de.sgd_step(params, de.gradients(loss, params), state)
                sums["loss_cls"] += cls.item()
                sums["loss_mse"] += mse_term.item()
                sums["loss_align"] += align_term.item()
                sums["loss_total"] += loss.item()
        except NumericError as exc:
            raise TrainingDivergedError(epoch, f"student diverged at epoch {epoch}: {exc}")
        n = max(1, len(batches))
        val_acc = _accuracy_over(params, backbone, val, zscore_batch)
        record = {k: v / n for k, v in sums.items()}
        record.update(epoch=epoch, lr=state.lr_effective(), val_accuracy=val_acc)
        metrics.append(record)
        if best is None or val_acc > best.val_accuracy:
            best = Checkpoint(params.copy(), val_acc, epoch, backbone, metrics, audit)
    best.metrics = metrics
    best.skipped_augmentations = skipped
    return best


def predict(checkpoint: Checkpoint, trials: np.ndarray) -> np.ndarray:
    """Zero-calibration inference: argmax logits on normalized raw trials."""
    trials = np.asarray(trials, dtype=np.float64)
    if trials.ndim == 2:
        trials = trials[None]
    return model.predict_labels(checkpoint.params, checkpoint.backbone, zscore_batch(trials))


# ------------------------------------------------------------ config file I/O

_BOOL = ("1", "true", "yes", "on")

_CONFIG_FIELDS = {
    "epochs": int,
    "teacher_epochs": int,
    "batch_size": int,
    "base_lr": float,
    "seed": int,
    "gamma1": float,
    "gamma2": float,
    "alpha_policy": str,
    "distill_target": str,
    "augment": lambda s: s.lower() in _BOOL,
    "align": lambda s: s.lower() in _BOOL,
    "teacher_augment": lambda s: s.lower() in _BOOL,
    "val_fraction": float,
    "band_lo_hz": float,
    "band_hi_hz": float,
}


def parse_config_text(text: str) -> dict:
    """Flat `key = value` lines with # comments -> typed mapping."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_FIELDS:
            raise InvalidConfigError(f"line {lineno}: unknown config key {key!r}")
        out[key] = _CONFIG_FIELDS[key](value)
    return out


def config_from_mapping(mapping: dict) -> TrainConfig:
    kwargs = dict(mapping)
    weights = LossWeights(kwargs.pop("gamma1", 0.0), kwargs.pop("gamma2", 0.0))
    return TrainConfig(weights=weights, **kwargs)


def config_to_text(config: TrainConfig) -> str:
    lines = [
        f"epochs = {config.epochs}",
        f"batch_size = {config.batch_size}",
        f"base_lr = {config.base_lr!r}",
        f"seed = {config.seed}",
        f"gamma1 = {config.weights.gamma1!r}",
        f"gamma2 = {config.weights.gamma2!r}",
        f"alpha_policy = {config.alpha_policy}",
        f"distill_target = {config.distill_target}",
        f"augment = {str(config.augment).lower()}",
        f"align = {str(config.align).lower()}",
        f"teacher_augment = {str(config.teacher_augment).lower()}",
        f"val_fraction = {config.val_fraction!r}",
        f"band_lo_hz = {config.band_lo_hz!r}",
        f"band_hi_hz = {config.band_hi_hz!r}",
    ]
    return "\n".join(lines) + "\n"
