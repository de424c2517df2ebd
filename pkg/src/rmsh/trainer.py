"""Alternating optimisation.

Parameter pass: Adam on the network with the unified codes ``b`` held fixed.
Code pass: ``b = sgn(z_image + z_text)`` with the network held fixed, once
per epoch after the parameter pass.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bounds import BoundsReport, effective_delta_range
from .data import Dataset, sample_triplet_indices
from .errors import EmptyIntervalError, ShapeMismatchError, ValidationError
from .model import HashModel, ModelDims, backward, binarize, forward_head, forward_triplets, init_params
from .objective import LossWeights, objective

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    K: int = 16
    delta: int | str = "auto"
    lambda1: float = 0.01
    lambda2: float = 0.1
    lambda3: float = 0.1
    lambda4: float = 0.1
    w_p: float = 20.0
    learning_rate: float = 0.001
    batch_size: int = 128
    epochs: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    confidence: float = 0.9
    hidden: int = 64
    neighbor_mode: str = "cardinality"
    inter_both_directions: bool = True
    triplets_per_epoch: int = 0  # 0 -> one triplet per training row

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("lambda1", "lambda2", "lambda3", "lambda4", "w_p", "learning_rate"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if self.K < 2:
            raise ValidationError(f"K must be >= 2, got {self.K}")
        if self.batch_size < 3:
            raise ValidationError(f"batch_size must be >= 3, got {self.batch_size}")
        if self.epochs < 0:
            raise ValidationError("epochs must be non-negative")
        if isinstance(self.delta, str):
            if self.delta != "auto":
                raise ValidationError(f"delta must be an integer or 'auto', got {self.delta!r}")
        elif not 1 <= self.delta <= self.K:
            raise ValidationError(f"delta must lie in [1, K={self.K}], got {self.delta}")
        if not 0.5 < self.confidence < 1.0:
            raise ValidationError("confidence must lie in (1/2, 1)")

    def loss_weights(self, delta: int) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.w_p, int(delta),
                           self.inter_both_directions)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# config file: one ``key = value`` per line, ``#`` starts a comment
# ---------------------------------------------------------------------------


def _coerce(name: str, raw: str, default):
    raw = raw.strip()
    if name == "delta":
        return "auto" if raw.lower() == "auto" else int(raw)
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    base = base or TrainConfig()
    known = {f.name: getattr(base, f.name) for f in dataclasses.fields(TrainConfig)}
    values = dict(known)
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValidationError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(key, raw, known[key])
        except ValueError as exc:
            raise ValidationError(f"config line {lineno}: bad value for {key}: {exc}") from None
    return TrainConfig(**values)


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_config(Path(path).read_text(), base)


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(TrainConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# optimiser and code update
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place bias-corrected Adam update; advances ``state.t``."""
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeMismatchError(f"gradient for {k} has shape {g.shape}, parameter {p.shape}")
        m, v = state.m[k], state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def update_codes(z_image: np.ndarray, z_text: np.ndarray) -> np.ndarray:
    z_image, z_text = np.asarray(z_image), np.asarray(z_text)
    if z_image.shape != z_text.shape:
        raise ShapeMismatchError(f"relaxed code shapes differ: {z_image.shape} vs {z_text.shape}")
    return binarize(z_image + z_text)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainState:
    model: HashModel
    unified_codes: np.ndarray
    adam: AdamState
    rng: np.random.Generator
    delta: int
    epoch: int = 0
    history: list[dict] = field(default_factory=list)


@dataclass
class FitResult:
    model: HashModel
    codes: np.ndarray
    history: list[dict]
    delta: int
    bounds: BoundsReport | None


def relaxed_codes(model: HashModel, ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    return forward_head(model, "image", ds.image.rows), forward_head(model, "text", ds.text.rows)


def resolve_delta(cfg: TrainConfig, ds: Dataset) -> tuple[int, BoundsReport | None]:
    if cfg.delta != "auto":
        return int(cfg.delta), None
    report = effective_delta_range(ds.labels, cfg.K, cfg.confidence, cfg.neighbor_mode)
    if report.empty:
        raise EmptyIntervalError(f"delta='auto' but the effective interval is empty: {report.diagnostic}")
    return report.midpoint, report


def init_state(ds: Dataset, cfg: TrainConfig, delta: int) -> TrainState:
    dims = ModelDims(ds.image.dim, ds.text.dim, cfg.hidden, cfg.K, ds.labels.c)
    model = init_params(dims, cfg.seed)
    zx, zy = relaxed_codes(model, ds)
    return TrainState(
        model=model,
        unified_codes=update_codes(zx, zy),
        adam=AdamState.zeros_like(model.params),
        rng=np.random.default_rng([cfg.seed, 1]),
        delta=delta,
    )


def train_epoch(state: TrainState, ds: Dataset, cfg: TrainConfig) -> dict:
    model = state.model
    weights = cfg.loss_weights(state.delta)
    n_trip = cfg.triplets_per_epoch or ds.n
    idx_all = sample_triplet_indices(ds.n, n_trip, state.rng)
    labels = ds.labels.entries
    totals = dict.fromkeys(("triplet_intra", "triplet_inter", "classification_real",
                            "classification_pseudo", "quantization", "total"), 0.0)

    for start in range(0, n_trip, cfg.batch_size):
        idx = idx_all[start : start + cfg.batch_size]
        fwd = forward_triplets(model, ds.image.rows[idx], ds.text.rows[idx])
        bd, d_codes, d_probs = objective(fwd.codes, fwd.probs, labels[idx], state.unified_codes[idx], weights)
        model.zero_grad()
        backward(model, d_codes, d_probs)
        adam_step(model.params, model.grads, state.adam, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
        for k in totals:
            totals[k] += getattr(bd, k)

    zx, zy = relaxed_codes(model, ds)
    state.unified_codes = update_codes(zx, zy)
    state.epoch += 1

    metrics = {k: v / n_trip for k, v in totals.items()}
    metrics.update(lambda1=cfg.lambda1, lambda2=cfg.lambda2, lambda3=cfg.lambda3, lambda4=cfg.lambda4,
                   w_p=cfg.w_p, delta=state.delta, epoch=state.epoch)
    metrics["code_balance"] = float((state.unified_codes > 0).mean())
    state.history.append(metrics)
    log.info("epoch %d total=%.5f", state.epoch, metrics["total"])
    return metrics


def fit(ds: Dataset, cfg: TrainConfig, metrics_path=None) -> FitResult:
    if ds.n < 3:
        raise ValidationError(f"need at least 3 training rows, got {ds.n}")
    delta, report = resolve_delta(cfg, ds)
    if not 1 <= delta <= cfg.K:
        raise ValidationError(f"resolved delta {delta} outside [1, {cfg.K}]")
    state = init_state(ds, cfg, delta)
    fh = open(metrics_path, "w") if metrics_path is not None else None
    try:
        if fh is not None and report is not None:
            fh.write(json.dumps({"event": "delta_resolved", "delta": delta, "bounds": report.to_dict()},
                                sort_keys=True) + "\n")
        for _ in range(cfg.epochs):
            m = train_epoch(state, ds, cfg)
            if fh is not None:
                fh.write(json.dumps(m, sort_keys=True) + "\n")
    finally:
        if fh is not None:
            fh.close()
    return FitResult(state.model, state.unified_codes, state.history, delta, report)

