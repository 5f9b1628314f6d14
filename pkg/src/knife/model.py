"""Feature extractor + classifier pair shared by teacher and student networks.

Architecture (desk scale): a temporal filter bank over the sample axis, a
per-filter spatial mix across channels, ELU, average pooling, then a dense
classifier on the flattened feature vector. The teacher consumes
the per-channel phase spectrum reshaped as an (n, m) "signal"; the student
consumes z-scored raw signals; both share this architecture so their feature
spaces line up for distillation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffengine as de
from . import fourier
from .diffengine import ModelParams, Tensor
from .errors import InvalidConfigError, InvalidInputError

__all__ = [
    "BackboneConfig",
    "build_network",
    "forward_features",
    "forward_logits",
    "predict_labels",
    "phase_input",
    "phase_input_batch",
]


@dataclass(frozen=True)
class BackboneConfig:
    n_channels: int
    n_samples: int
    temporal_kernel: int = 25
    n_temporal_filters: int = 8
    n_spatial_filters: int = 4
    pool_width: int = 8
    n_classes: int = 2
    feature_dim: int | None = None

    def __post_init__(self):
        if self.n_classes < 2:
            raise InvalidConfigError("need at least 2 classes")
        if self.temporal_kernel >= self.n_samples:
            raise InvalidConfigError("temporal kernel must be shorter than the trial")
        t_conv = self.n_samples - self.temporal_kernel + 1
        t_pool = t_conv // self.pool_width
        if t_pool < 1:
            raise InvalidConfigError("pool width leaves no time steps")
        implied = self.n_temporal_filters * self.n_spatial_filters * t_pool
        if self.feature_dim is None:
            object.__setattr__(self, "feature_dim", implied)
        elif self.feature_dim != implied:
            raise InvalidConfigError(
                f"feature_dim {self.feature_dim} inconsistent with implied {implied}"
            )

    @property
    def t_conv(self) -> int:
        return self.n_samples - self.temporal_kernel + 1

    @property
    def t_pool(self) -> int:
        return self.t_conv // self.pool_width


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def build_network(config: BackboneConfig, seed: int) -> ModelParams:
    """Fresh parameters: Glorot-uniform weights, zero biases, seeded draws."""
    rng = np.random.default_rng(seed)
    f, k = config.n_temporal_filters, config.temporal_kernel
    s, n = config.n_spatial_filters, config.n_channels
    d, c = config.feature_dim, config.n_classes
    return ModelParams.from_arrays(
        {
            "temporal.w": _glorot(rng, (f, k), fan_in=k, fan_out=f),
            "temporal.b": np.zeros(f),
            "spatial.w": _glorot(rng, (s, n), fan_in=n, fan_out=s),
            "classifier.w": _glorot(rng, (d, c), fan_in=d, fan_out=c),
            "classifier.b": np.zeros(c),
        }
    )


def _check_batch(config: BackboneConfig, batch: np.ndarray) -> None:
    if batch.ndim != 3 or batch.shape[1:] != (config.n_channels, config.n_samples):
        raise InvalidInputError(
            f"batch shape {batch.shape} != (B, {config.n_channels}, {config.n_samples})"
        )


def forward_features(params: ModelParams, config: BackboneConfig, batch) -> Tensor:
    """Feature matrix (batch x d); rows feed distillation and alignment."""
    x = de.as_tensor(batch)
    _check_batch(config, x.data)
    h = de.conv1d_time(x, params.tensors["temporal.w"], stride=1)
    h = de.add_bias(h, params.tensors["temporal.b"])
    h = de.matmul(params.tensors["spatial.w"], h)
    h = de.elu(h)
    h = de.avg_pool1d(h, config.pool_width)
    return de.flatten(h)


def forward_logits(params: ModelParams, config: BackboneConfig, batch) -> Tensor:
    feats = forward_features(params, config, batch)
    return de.add_bias(
        de.matmul(feats, params.tensors["classifier.w"]), params.tensors["classifier.b"]
    )


def predict_labels(params: ModelParams, config: BackboneConfig, batch) -> np.ndarray:
    with de.no_grad():
        logits = forward_logits(params, config, batch)
    return np.argmax(logits.data, axis=1)


def phase_input(trial: np.ndarray) -> np.ndarray:
    """Per-channel phase spectrum of a single (n, m) trial, in radians."""
    trial = np.asarray(trial, dtype=np.float64)
    if trial.ndim != 2:
        raise InvalidInputError(f"trial must be (channels, samples), got {trial.shape}")
    _, phase = fourier.amplitude_phase_rows(trial)
    return phase


def phase_input_batch(batch: np.ndarray) -> np.ndarray:
    """Vectorized phase_input over a (B, n, m) batch."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3:
        raise InvalidInputError(f"batch must be (B, channels, samples), got {batch.shape}")
    b, n, m = batch.shape
    _, phase = fourier.amplitude_phase_rows(batch.reshape(b * n, m))
    return phase.reshape(b, n, m)
