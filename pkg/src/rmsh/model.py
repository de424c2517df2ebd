"""Two modality hashing heads, the pseudo-codes network and a shared tag classifier.

Per modality: ``z = tanh(tanh(x @ W1 + b1) @ W2 + b2)``. The pseudo-codes
network fuses two relaxed codes into union/intersection codes with
``tanh([z1, z2] @ W.T)`` (no bias, one weight matrix per fusion op, shared
by both modalities). The classifier ``sigmoid(z @ Wc + bc)`` is shared by
every code. Gradients are written out by hand for exactly this graph.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import BadMagicError, ContractError, DimensionMismatchError, ShapeMismatchError, TruncatedFileError, ValidationError

CHECKPOINT_MAGIC = b"RMSHMODL"
CHECKPOINT_VERSION = 1
HEADS = ("image", "text")
FUSION_OPS = ("union", "intersect")

# open-interval clamps so tanh/sigmoid never report exactly +-1 or 0/1
_ONE_BELOW = np.nextafter(1.0, 0.0)
_ZERO_ABOVE = np.nextafter(0.0, 1.0)


@dataclass(frozen=True)
class ModelDims:
    dim_image: int
    dim_text: int
    hidden: int
    K: int
    C: int

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if int(v) < 1:
                raise ValidationError(f"model dimension {name} must be >= 1, got {v}")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        H, K, C = self.hidden, self.K, self.C
        return {
            "image.w1": (self.dim_image, H),
            "image.b1": (H,),
            "image.w2": (H, K),
            "image.b2": (K,),
            "text.w1": (self.dim_text, H),
            "text.b1": (H,),
            "text.w2": (H, K),
            "text.b2": (K,),
            "pcn.union": (K, 2 * K),
            "pcn.intersect": (K, 2 * K),
            "cls.w": (K, C),
            "cls.b": (C,),
        }


PARAM_ORDER = tuple(ModelDims(1, 1, 1, 1, 1).shapes())


class HashModel:
    def __init__(self, dims: ModelDims, params: dict[str, np.ndarray] | None = None):
        self.dims = dims
        shapes = dims.shapes()
        if params is None:
            params = {k: np.zeros(s) for k, s in shapes.items()}
        missing = set(shapes) - set(params)
        if missing:
            raise ValidationError(f"missing parameters: {sorted(missing)}")
        self.params = {}
        for k in PARAM_ORDER:
            p = np.array(params[k], dtype=np.float64)
            if p.shape != shapes[k]:
                raise ShapeMismatchError(f"parameter {k} has shape {p.shape}, expected {shapes[k]}")
            if not np.isfinite(p).all():
                raise ValidationError(f"parameter {k} has non-finite entries")
            self.params[k] = p
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._cache = None

    def copy(self) -> "HashModel":
        return HashModel(self.dims, {k: v.copy() for k, v in self.params.items()})

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())


def init_params(dims: ModelDims, seed: int) -> HashModel:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in dims.shapes().items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
            continue
        fan_in = shape[1] if name.startswith("pcn.") else shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return HashModel(dims, params)


def _tanh(a: np.ndarray) -> np.ndarray:
    return np.clip(np.tanh(a), -_ONE_BELOW, _ONE_BELOW)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    return np.clip(expit(a), _ZERO_ABOVE, _ONE_BELOW)


def _check_modality(modality: str) -> None:
    if modality not in HEADS:
        raise ValidationError(f"unknown modality {modality!r}; expected one of {HEADS}")


def forward_head(model: HashModel, modality: str, features: np.ndarray) -> np.ndarray:
    _check_modality(modality)
    p = model.params
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != p[f"{modality}.w1"].shape[0]:
        raise ShapeMismatchError(
            f"{modality} head expects {p[f'{modality}.w1'].shape[0]} features, got {x.shape[-1]}"
        )
    h = _tanh(x @ p[f"{modality}.w1"] + p[f"{modality}.b1"])
    return _tanh(h @ p[f"{modality}.w2"] + p[f"{modality}.b2"])


def forward_pcn(model: HashModel, op: str, z1: np.ndarray, z2: np.ndarray) -> np.ndarray:
    if op not in FUSION_OPS:
        raise ValidationError(f"unknown fusion op {op!r}; expected one of {FUSION_OPS}")
    z1, z2 = np.asarray(z1, dtype=np.float64), np.asarray(z2, dtype=np.float64)
    K = model.dims.K
    if z1.shape[-1] != K or z2.shape[-1] != K or z1.shape != z2.shape:
        raise ShapeMismatchError(f"fusion inputs must both have length {K}, got {z1.shape} and {z2.shape}")
    return _tanh(np.concatenate([z1, z2], axis=-1) @ model.params[f"pcn.{op}"].T)


def forward_classifier(model: HashModel, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != model.dims.K:
        raise ShapeMismatchError(f"classifier expects codes of length {model.dims.K}, got {z.shape[-1]}")
    return _sigmoid(z @ model.params["cls.w"] + model.params["cls.b"])


def binarize(z: np.ndarray) -> np.ndarray:
    """sgn with sgn(0) = +1."""
    return np.where(np.asarray(z) >= 0, 1, -1).astype(np.int8)


@dataclass
class TripletForward:
    codes: np.ndarray  # (B, 2, 5, K): [image|text] x [z1, z2, z3, union, intersect]
    probs: np.ndarray  # (B, 2, 5, C)


def forward_triplets(model: HashModel, x_image: np.ndarray, x_text: np.ndarray) -> TripletForward:
    """Forward a batch of B triplets; inputs are (B, 3, D) per modality.

    Caches activations on the model for a following :func:`backward`.
    """
    p = model.params
    B = x_image.shape[0]
    K = model.dims.K
    codes = np.empty((B, 2, 5, K))
    cache = {}
    for m, (modality, feats) in enumerate(zip(HEADS, (x_image, x_text))):
        feats = np.asarray(feats, dtype=np.float64)
        if feats.shape[:2] != (B, 3) or feats.shape[2] != p[f"{modality}.w1"].shape[0]:
            raise ShapeMismatchError(f"{modality} triplet features have shape {feats.shape}")
        inp = feats.reshape(B * 3, -1)
        h = _tanh(inp @ p[f"{modality}.w1"] + p[f"{modality}.b1"])
        z = _tanh(h @ p[f"{modality}.w2"] + p[f"{modality}.b2"]).reshape(B, 3, K)
        cat = np.concatenate([z[:, 0], z[:, 1]], axis=1)
        zu = _tanh(cat @ p["pcn.union"].T)
        zt = _tanh(cat @ p["pcn.intersect"].T)
        codes[:, m, :3] = z
        codes[:, m, 3] = zu
        codes[:, m, 4] = zt
        cache[modality] = (inp, h, cat)
    probs = _sigmoid(codes @ p["cls.w"] + p["cls.b"])
    model._cache = (cache, codes, probs)
    return TripletForward(codes, probs)


def backward(model: HashModel, d_codes: np.ndarray, d_probs: np.ndarray) -> dict[str, np.ndarray]:
    """Accumulate parameter gradients from upstream gradients at every forward output.

    ``d_codes`` and ``d_probs`` match :class:`TripletForward`'s arrays. The
    cached forward pass is consumed.
    """
    if model._cache is None:
        raise ContractError("backward called without a preceding forward_triplets")
    cache, codes, probs = model._cache
    model._cache = None
    p, g = model.params, model.grads
    K, C = model.dims.K, model.dims.C
    if d_codes.shape != codes.shape or d_probs.shape != probs.shape:
        raise ShapeMismatchError("upstream gradient shapes do not match the cached forward pass")

    d_logits = d_probs * probs * (1.0 - probs)
    flat_codes = codes.reshape(-1, K)
    flat_dl = d_logits.reshape(-1, C)
    g["cls.w"] += flat_codes.T @ flat_dl
    g["cls.b"] += flat_dl.sum(axis=0)
    dz_all = d_codes + d_logits @ p["cls.w"].T

    B = codes.shape[0]
    for m, modality in enumerate(HEADS):
        inp, h, cat = cache[modality]
        dcat = np.zeros((B, 2 * K))
        for slot, op in ((3, "union"), (4, "intersect")):
            zf = codes[:, m, slot]
            dpre = dz_all[:, m, slot] * (1.0 - zf * zf)
            g[f"pcn.{op}"] += dpre.T @ cat
            dcat += dpre @ p[f"pcn.{op}"]
        dz = dz_all[:, m, :3].copy()
        dz[:, 0] += dcat[:, :K]
        dz[:, 1] += dcat[:, K:]
        z = codes[:, m, :3].reshape(B * 3, K)
        da2 = dz.reshape(B * 3, K) * (1.0 - z * z)
        g[f"{modality}.w2"] += h.T @ da2
        g[f"{modality}.b2"] += da2.sum(axis=0)
        da1 = (da2 @ p[f"{modality}.w2"].T) * (1.0 - h * h)
        g[f"{modality}.w1"] += inp.T @ da1
        g[f"{modality}.b1"] += da1.sum(axis=0)
    return g


def encode(model: HashModel, modality: str, features: np.ndarray, batch: int = 4096) -> np.ndarray:
    """Binary codes in {-1, +1} for a feature matrix."""
    x = np.asarray(features, dtype=np.float64)
    out = np.empty((x.shape[0], model.dims.K), dtype=np.int8)
    for s in range(0, x.shape[0], batch):
        out[s : s + batch] = binarize(forward_head(model, modality, x[s : s + batch]))
    return out


# ---------------------------------------------------------------------------
# checkpoint: magic, u32 version, u64 x5 dims, then float32 tensors in PARAM_ORDER
# ---------------------------------------------------------------------------

_DIMS_FMT = "<I5Q"


def save_checkpoint(path, model: HashModel) -> None:
    d = model.dims
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack(_DIMS_FMT, CHECKPOINT_VERSION, d.dim_image, d.dim_text, d.hidden, d.K, d.C))
        for name in PARAM_ORDER:
            fh.write(np.ascontiguousarray(model.params[name], dtype="<f4").tobytes())


def load_checkpoint(path, expected: ModelDims | None = None) -> HashModel:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(f"{path}: not a model checkpoint (magic {magic!r})")
        header = fh.read(struct.calcsize(_DIMS_FMT))
        if len(header) != struct.calcsize(_DIMS_FMT):
            raise TruncatedFileError(f"{path}: truncated checkpoint header")
        version, dx, dy, hid, K, C = struct.unpack(_DIMS_FMT, header)
        if version != CHECKPOINT_VERSION:
            raise DimensionMismatchError(f"{path}: unsupported checkpoint version {version}")
        dims = ModelDims(dx, dy, hid, K, C)
        if expected is not None and expected != dims:
            raise DimensionMismatchError(f"{path}: checkpoint dims {dims} differ from configured {expected}")
        params = {}
        for name, shape in dims.shapes().items():
            n = int(np.prod(shape))
            buf = fh.read(4 * n)
            if len(buf) != 4 * n:
                raise TruncatedFileError(f"{path}: truncated while reading {name}")
            params[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float64)
        if fh.read(1):
            raise DimensionMismatchError(f"{path}: trailing bytes after parameters")
    return HashModel(dims, params)
