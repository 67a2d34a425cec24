"""Pixel-wise prominence regressor: a 3-layer MLP trained with Adam.

Architecture is fixed at 3 -> 16 -> 16 -> 1 with ReLU hidden activations
and a sigmoid output. Each pixel of the feature stack is processed
independently; one training step consumes one image through the
two-term loss

    (mean_inside - gt_prominence)^2 + mean_outside^2

where the means run over predicted values inside/outside the ground
truth mask.

Parameters are kept as float64 but quantized to float32-representable
values at initialization and after training, so checkpoint files
(float32 payload) round-trip bitwise and reproduce predictions exactly.

Checkpoint format (binary, little-endian):

    bytes 0..3   magic "PROM"
    u32          version (currently 1)
    u32          layer count (3)
    per layer    u32 in_dim, u32 out_dim
    then         float32 parameters: per layer, weight matrix
                 (out_dim x in_dim, row-major) followed by bias vector
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import (
    ArtifactRecord,
    ContractError,
    DataError,
    FormatError,
    ValidationError,
    as_mask,
    load_mask,
    require_same_shape,
)
from .features import FeatureStack

LAYER_SIZES = (3, 16, 16, 1)
N_PARAMS = sum((LAYER_SIZES[i] + 1) * LAYER_SIZES[i + 1] for i in range(3))

CHECKPOINT_MAGIC = b"PROM"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class RegressorParams:
    """Weights and biases of the three layers; also used for gradients."""

    weights: tuple[np.ndarray, np.ndarray, np.ndarray]
    biases: tuple[np.ndarray, np.ndarray, np.ndarray]

    def __post_init__(self):
        ws, bs = [], []
        for index in range(3):
            shape = (LAYER_SIZES[index + 1], LAYER_SIZES[index])
            w = np.asarray(self.weights[index], dtype=np.float64)
            b = np.asarray(self.biases[index], dtype=np.float64)
            if w.shape != shape or b.shape != (shape[0],):
                raise ContractError(
                    f"layer {index}: expected weight {shape} and bias ({shape[0]},), "
                    f"got {w.shape} and {b.shape}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ContractError(f"layer {index}: non-finite parameters")
            w.flags.writeable = False
            b.flags.writeable = False
            ws.append(w)
            bs.append(b)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    def to_vector(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "RegressorParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (N_PARAMS,):
            raise ContractError(f"expected parameter vector of length {N_PARAMS}, got {vec.shape}")
        ws, bs, pos = [], [], 0
        for index in range(3):
            n_in, n_out = LAYER_SIZES[index], LAYER_SIZES[index + 1]
            ws.append(vec[pos : pos + n_in * n_out].reshape(n_out, n_in))
            pos += n_in * n_out
            bs.append(vec[pos : pos + n_out])
            pos += n_out
        return cls(weights=tuple(ws), biases=tuple(bs))

    def quantized(self) -> "RegressorParams":
        """Round every parameter to the nearest float32 value."""
        return RegressorParams(
            weights=tuple(w.astype(np.float32).astype(np.float64) for w in self.weights),
            biases=tuple(b.astype(np.float32).astype(np.float64) for b in self.biases),
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ContractError("adam betas must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ContractError("epsilon must be > 0")
        if self.epochs < 0:
            raise ContractError("epochs must be >= 0")


@dataclass(frozen=True)
class TrainResult:
    params: RegressorParams
    epoch_losses: list[float]


def _init_from_rng(rng: np.random.Generator) -> RegressorParams:
    ws, bs = [], []
    for index in range(3):
        n_in, n_out = LAYER_SIZES[index], LAYER_SIZES[index + 1]
        limit = np.sqrt(6.0 / (n_in + n_out))
        ws.append(rng.uniform(-limit, limit, size=(n_out, n_in)))
        bs.append(np.zeros(n_out))
    return RegressorParams(weights=tuple(ws), biases=tuple(bs)).quantized()


def init_params(seed: int) -> RegressorParams:
    """Seeded uniform init in +/- sqrt(6 / (fan_in + fan_out)); zero biases."""
    return _init_from_rng(np.random.default_rng(seed))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward(params: RegressorParams, x: np.ndarray):
    """x: (N, 3) -> activations of every layer."""
    w1, w2, w3 = params.weights
    b1, b2, b3 = params.biases
    z1 = x @ w1.T + b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ w2.T + b2
    a2 = np.maximum(z2, 0.0)
    z3 = a2 @ w3.T + b3
    y = _sigmoid(z3[:, 0])
    return z1, a1, z2, a2, y


def predict(params: RegressorParams, stack: FeatureStack) -> np.ndarray:
    """Per-pixel forward pass over the stack; values in (0, 1)."""
    h, w = stack.shape
    x = stack.as_array().reshape(-1, 3)
    *_, y = _forward(params, x)
    out = y.reshape(h, w)
    out.flags.writeable = False
    return out


def _check_loss_inputs(stack: FeatureStack, mask: np.ndarray, gt_prominence: float):
    mask = as_mask(mask)
    require_same_shape(np.empty(stack.shape), mask, "loss")
    inside = int(mask.sum())
    if inside == 0 or inside == mask.size:
        raise ContractError("mask must have at least one inside and one outside pixel")
    if not 0.0 <= gt_prominence <= 1.0:
        raise ContractError(f"gt_prominence {gt_prominence} outside [0, 1]")
    return mask


def _loss_and_grad(
    params: RegressorParams,
    stack: FeatureStack,
    mask: np.ndarray,
    gt_prominence: float,
    want_grad: bool,
):
    mask = _check_loss_inputs(stack, mask, gt_prominence)
    x = stack.as_array().reshape(-1, 3)
    flat_mask = mask.ravel()
    z1, a1, z2, a2, y = _forward(params, x)
    n_in = int(flat_mask.sum())
    n_out = flat_mask.size - n_in
    mean_in = float(y[flat_mask].mean())
    mean_out = float(y[~flat_mask].mean())
    loss_value = (mean_in - gt_prominence) ** 2 + mean_out**2
    if not want_grad:
        return loss_value, None

    dy = np.where(
        flat_mask,
        2.0 * (mean_in - gt_prominence) / n_in,
        2.0 * mean_out / n_out,
    )
    w1, w2, w3 = params.weights
    dz3 = (dy * y * (1.0 - y))[:, None]  # (N, 1)
    dw3 = dz3.T @ a2
    db3 = dz3.sum(axis=0)
    da2 = dz3 @ w3
    dz2 = da2 * (z2 > 0.0)
    dw2 = dz2.T @ a1
    db2 = dz2.sum(axis=0)
    da1 = dz2 @ w2
    dz1 = da1 * (z1 > 0.0)
    dw1 = dz1.T @ x
    db1 = dz1.sum(axis=0)
    grads = RegressorParams(weights=(dw1, dw2, dw3), biases=(db1, db2, db3))
    return loss_value, grads


def loss(
    params: RegressorParams, stack: FeatureStack, mask: np.ndarray, gt_prominence: float
) -> float:
    """Two-term squared error of the inside/outside prediction means."""
    value, _ = _loss_and_grad(params, stack, mask, gt_prominence, want_grad=False)
    return value


def grad(
    params: RegressorParams, stack: FeatureStack, mask: np.ndarray, gt_prominence: float
) -> RegressorParams:
    """Analytic gradient of `loss`, packaged in parameter shapes."""
    _, grads = _loss_and_grad(params, stack, mask, gt_prominence, want_grad=True)
    return grads


def train(
    records: list[ArtifactRecord],
    features: Mapping[str, FeatureStack],
    cfg: TrainConfig,
    masks: Mapping[str, np.ndarray] | None = None,
) -> TrainResult:
    """Adam training, one image per step, reshuffled each epoch by the seeded PRNG.

    Masks default to loading each record's mask_path; pass `masks` keyed
    by record id to override. Returns the final parameters (float32-
    quantized) and the per-epoch mean of the per-step losses.
    """
    if not records:
        raise ContractError("train requires at least one record")
    prepared = []
    for rec in records:
        if rec.prominence is None:
            raise ValidationError(f"record {rec.id!r}: missing prominence")
        if rec.id not in features:
            raise ValidationError(f"record {rec.id!r}: missing feature stack")
        mask = masks[rec.id] if masks is not None else load_mask(rec.mask_path)
        prepared.append((features[rec.id], as_mask(mask), rec.prominence))

    rng = np.random.default_rng(cfg.seed)
    theta = _init_from_rng(rng).to_vector()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    t = 0
    trace: list[float] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(prepared))
        step_losses = []
        for index in order:
            stack, mask, prominence = prepared[index]
            params = RegressorParams.from_vector(theta)
            loss_value, grads = _loss_and_grad(params, stack, mask, prominence, want_grad=True)
            step_losses.append(loss_value)
            g = grads.to_vector()
            t += 1
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
            m_hat = m / (1.0 - cfg.beta1**t)
            v_hat = v / (1.0 - cfg.beta2**t)
            theta = theta - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
        trace.append(float(np.mean(step_losses)))
    return TrainResult(params=RegressorParams.from_vector(theta).quantized(), epoch_losses=trace)


# --------------------------------------------------------------------------
# Checkpoint I/O


def save_params(params: RegressorParams, path: str | Path) -> None:
    """Write a PROM checkpoint (float32 payload)."""
    header = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, 3)
    for index in range(3):
        header += struct.pack("<II", LAYER_SIZES[index], LAYER_SIZES[index + 1])
    payload = b""
    for w, b in zip(params.weights, params.biases):
        payload += w.astype("<f4").tobytes() + b.astype("<f4").tobytes()
    Path(path).write_bytes(header + payload)


def load_params(path: str | Path) -> RegressorParams:
    """Read a PROM checkpoint written by save_params."""
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < 12:
        raise FormatError(f"{path}: truncated checkpoint header")
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}")
    version, layer_count = struct.unpack("<II", buf[4:12])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    if layer_count != 3:
        raise FormatError(f"{path}: expected 3 layers, got {layer_count}")
    dims_end = 12 + 8 * layer_count
    if len(buf) < dims_end:
        raise FormatError(f"{path}: truncated layer table")
    dims = struct.unpack(f"<{2 * layer_count}I", buf[12:dims_end])
    expected_dims = tuple(
        d for index in range(3) for d in (LAYER_SIZES[index], LAYER_SIZES[index + 1])
    )
    if dims != expected_dims:
        raise FormatError(f"{path}: unsupported architecture {dims}")
    expected_len = dims_end + 4 * N_PARAMS
    if len(buf) != expected_len:
        raise FormatError(f"{path}: payload length {len(buf) - dims_end}, expected {4 * N_PARAMS}")
    flat = np.frombuffer(buf, dtype="<f4", offset=dims_end).astype(np.float64)
    if not np.all(np.isfinite(flat)):
        raise DataError(f"{path}: non-finite parameters")
    ws, bs, pos = [], [], 0
    for index in range(3):
        n_in, n_out = LAYER_SIZES[index], LAYER_SIZES[index + 1]
        ws.append(flat[pos : pos + n_in * n_out].reshape(n_out, n_in))
        pos += n_in * n_out
        bs.append(flat[pos : pos + n_out])
        pos += n_out
    return RegressorParams(weights=tuple(ws), biases=tuple(bs))
