"""Per-instance condition embeddings g_i.

Each instance is embedded from three pieces, concatenated and pushed through
a small seeded MLP:

    [ text(category) | fourier(size) | fourier(id / id_norm) ]

- text(): a stand-in for a text encoder: a deterministic unit-norm vector
  drawn from a stream keyed by (seed, category), so equal categories embed
  equally and different categories differ.
- fourier(): interleaved sin/cos features over doubling frequencies,
  [sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)]
  applied per component; the tracking id is scaled into [0, 1] by id_norm
  before encoding so the features stay in the bands' useful range.
- MLP: two affine layers with an x * sigmoid(x) activation between them,
  weights drawn normal scaled by 1 / sqrt(fan_in) from the params seed,
  zero biases.

Condition tokens are ordered by sorted tracking id, matching the mask
module's column order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .rng import CounterRng, hash64
from .scene import Instance, Scene


@dataclass(frozen=True)
class FourierMap:
    """Deterministic sin/cos feature map with L doubling frequency bands."""

    num_bands: int = 8

    def __post_init__(self) -> None:
        if self.num_bands < 1:
            raise ValidationError(f"num_bands must be >= 1, got {self.num_bands}")

    def encode(self, x: float) -> np.ndarray:
        """(2L,) features of a scalar, interleaved sin/cos per band."""
        out = np.empty(2 * self.num_bands, dtype=np.float64)
        for band in range(self.num_bands):
            arg = (2.0**band) * math.pi * x
            out[2 * band] = math.sin(arg)
            out[2 * band + 1] = math.cos(arg)
        return out

    def encode_vector(self, v) -> np.ndarray:
        """Per-component features, concatenated: (2L * len(v),)."""
        return np.concatenate([self.encode(float(x)) for x in v])


def fourier(x: float, num_bands: int = 8) -> np.ndarray:
    return FourierMap(num_bands).encode(x)


def pseudo_text_encode(category: str, seed: int, d_text: int = 32) -> np.ndarray:
    """Unit-norm stand-in embedding for a category name.

    Drawn from the counter stream keyed by hash64("pseudo-text", seed,
    category), then normalized; deterministic in (category, seed, d_text).
    """
    if d_text < 1:
        raise ValidationError(f"d_text must be >= 1, got {d_text}")
    rng = CounterRng(key=hash64("pseudo-text", seed, category))
    v = rng.normal(d_text)
    norm = float(np.sqrt(np.dot(v, v)))
    if norm == 0.0:
        raise ValidationError("degenerate zero draw in pseudo_text_encode")
    return v / norm


def _silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


@dataclass(frozen=True, eq=False)
class MlpParams:
    """Two affine layers mapping the concatenated features to d_model."""

    seed: int
    num_bands: int
    d_text: int
    hidden: int
    d_model: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def d_in(self) -> int:
        # category text + 3 fourier-encoded size components + encoded id
        return self.d_text + 6 * self.num_bands + 2 * self.num_bands

    def __post_init__(self) -> None:
        if self.w1.shape != (self.d_in, self.hidden):
            raise ValidationError(f"w1 must be ({self.d_in}, {self.hidden}), got {self.w1.shape}")
        if self.b1.shape != (self.hidden,):
            raise ValidationError(f"b1 must be ({self.hidden},), got {self.b1.shape}")
        if self.w2.shape != (self.hidden, self.d_model):
            raise ValidationError(f"w2 must be ({self.hidden}, {self.d_model}), got {self.w2.shape}")
        if self.b2.shape != (self.d_model,):
            raise ValidationError(f"b2 must be ({self.d_model},), got {self.b2.shape}")
        for name in ("w1", "b1", "w2", "b2"):
            arr = getattr(self, name)
            if not np.isfinite(arr).all():
                raise ValidationError(f"{name} must be finite")
            arr.setflags(write=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MlpParams):
            return NotImplemented
        return (
            (self.seed, self.num_bands, self.d_text, self.hidden, self.d_model)
            == (other.seed, other.num_bands, other.d_text, other.hidden, other.d_model)
            and np.array_equal(self.w1, other.w1)
            and np.array_equal(self.b1, other.b1)
            and np.array_equal(self.w2, other.w2)
            and np.array_equal(self.b2, other.b2)
        )


def init_mlp_params(
    seed: int,
    d_text: int = 32,
    num_bands: int = 8,
    hidden: int = 64,
    d_model: int = 64,
) -> MlpParams:
    """Seeded init: weights normal * (1 / sqrt(fan_in)), biases zero."""
    d_in = d_text + 8 * num_bands
    rng = CounterRng(key=hash64("mlp-init", seed))
    w1 = rng.normal(d_in * hidden).reshape(d_in, hidden) / math.sqrt(d_in)
    w2 = rng.normal(hidden * d_model).reshape(hidden, d_model) / math.sqrt(hidden)
    return MlpParams(
        seed=seed,
        num_bands=num_bands,
        d_text=d_text,
        hidden=hidden,
        d_model=d_model,
        w1=w1,
        b1=np.zeros(hidden),
        w2=w2,
        b2=np.zeros(d_model),
    )


@dataclass(frozen=True, eq=False)
class IdentityEmbedding:
    """One instance's condition token, with the inputs that produced it."""

    instance_id: int
    vector: np.ndarray
    category: str
    size: tuple[float, float, float]
    id_norm: float

    def __post_init__(self) -> None:
        self.vector.setflags(write=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, IdentityEmbedding):
            return NotImplemented
        return (
            (self.instance_id, self.category, self.size, self.id_norm)
            == (other.instance_id, other.category, other.size, other.id_norm)
            and np.array_equal(self.vector, other.vector)
        )


def embed_instance(instance: Instance, params: MlpParams, id_norm: float) -> IdentityEmbedding:
    """g_i for one instance; see module docstring for the exact feature law."""
    if id_norm <= 0:
        raise ValidationError(f"id_norm must be > 0, got {id_norm}")
    if instance.tracking_id > id_norm:
        raise ValidationError(
            f"tracking_id {instance.tracking_id} exceeds id_norm {id_norm}"
        )
    fmap = FourierMap(params.num_bands)
    features = np.concatenate(
        [
            pseudo_text_encode(instance.category, params.seed, params.d_text),
            fmap.encode_vector(instance.size),
            fmap.encode(instance.tracking_id / id_norm),
        ]
    )
    hidden = _silu(features @ params.w1 + params.b1)
    vector = hidden @ params.w2 + params.b2
    return IdentityEmbedding(
        instance_id=instance.tracking_id,
        vector=vector,
        category=instance.category,
        size=instance.size,
        id_norm=float(id_norm),
    )


def build_condition_set(
    scene: Scene, params: MlpParams, id_norm: float | None = None
) -> tuple[IdentityEmbedding, ...]:
    """Condition tokens for all scene instances, ordered by sorted tracking id.

    id_norm defaults to max tracking id + 1 so scaled ids land in [0, 1).
    """
    instances = sorted(scene.instances, key=lambda inst: inst.tracking_id)
    if not instances:
        return ()
    if id_norm is None:
        id_norm = float(max(inst.tracking_id for inst in instances) + 1)
    return tuple(embed_instance(inst, params, id_norm) for inst in instances)


def condition_matrix(embeddings, d_model: int) -> np.ndarray:
    """Stack embeddings into the (n, d_model) G matrix (empty n is fine)."""
    if not embeddings:
        return np.zeros((0, d_model), dtype=np.float64)
    return np.stack([e.vector for e in embeddings])


# ---------------------------------------------------------------------------
# params IO: full weights as decimal strings, exact round-trip

PARAMS_FORMAT = "instamask-mlp-params"
PARAMS_VERSION = 1


def save_mlp_params(params: MlpParams, path) -> None:
    doc = {
        "format": PARAMS_FORMAT,
        "version": PARAMS_VERSION,
        "seed": params.seed,
        "num_bands": params.num_bands,
        "d_text": params.d_text,
        "hidden": params.hidden,
        "d_model": params.d_model,
        "w1": [[repr(float(x)) for x in row] for row in params.w1],
        "b1": [repr(float(x)) for x in params.b1],
        "w2": [[repr(float(x)) for x in row] for row in params.w2],
        "b2": [repr(float(x)) for x in params.b2],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_mlp_params(path) -> MlpParams:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != PARAMS_FORMAT or doc.get("version") != PARAMS_VERSION:
        raise ValidationError("not an MLP params document")
    return MlpParams(
        seed=int(doc["seed"]),
        num_bands=int(doc["num_bands"]),
        d_text=int(doc["d_text"]),
        hidden=int(doc["hidden"]),
        d_model=int(doc["d_model"]),
        w1=np.array([[float(x) for x in row] for row in doc["w1"]], dtype=np.float64),
        b1=np.array([float(x) for x in doc["b1"]], dtype=np.float64),
        w2=np.array([[float(x) for x in row] for row in doc["w2"]], dtype=np.float64),
        b2=np.array([float(x) for x in doc["b2"]], dtype=np.float64),
    )
