"""Masked multi-head self-attention over [visual | condition] tokens.

Scores are Q K^T / sqrt(d_h) plus the additive mask; the mask's "minus
infinity" is the most negative finite float64, which after per-row max
subtraction underflows exp() to exactly 0.  A post-softmax snap zeroes any
weight below 1e-30 so masked entries carry exactly no attention, making the
no-leakage property exact rather than approximate.

All contractions go through non-optimized einsum: summation order is fixed,
so outputs are bit-reproducible regardless of BLAS threading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import MaskedRowError, ValidationError
from .masks import NEG_MASK, WEIGHT_SNAP, AttentionMask
from .rng import CounterRng, hash64


@dataclass(frozen=True, eq=False)
class AttentionParams:
    """Per-head projections, output projection, and the residual gate."""

    heads: int
    d_model: int
    w_q: np.ndarray  # (heads, d_model, d_head)
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray  # (d_model, d_model)
    omega: float = 0.0

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads

    def __post_init__(self) -> None:
        if self.heads < 1 or self.d_model < 1:
            raise ValidationError("heads and d_model must be >= 1")
        if self.d_model % self.heads != 0:
            raise ValidationError(
                f"d_model={self.d_model} not divisible by heads={self.heads}"
            )
        shape = (self.heads, self.d_model, self.d_head)
        for name in ("w_q", "w_k", "w_v"):
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValidationError(f"{name} must have shape {shape}, got {arr.shape}")
            arr.setflags(write=False)
        if self.w_o.shape != (self.d_model, self.d_model):
            raise ValidationError(
                f"w_o must be ({self.d_model}, {self.d_model}), got {self.w_o.shape}"
            )
        self.w_o.setflags(write=False)
        if not math.isfinite(self.omega):
            raise ValidationError("omega must be finite")


def init_attention_params(
    seed: int, d_model: int = 64, heads: int = 4, omega: float = 0.0
) -> AttentionParams:
    """Fresh seeded projections, normal * (1 / sqrt(d_model)); gate as given
    (0 by default, so the fused output starts as the identity)."""
    if d_model % heads != 0:
        raise ValidationError(f"d_model={d_model} not divisible by heads={heads}")
    d_head = d_model // heads
    rng = CounterRng(key=hash64("attention-init", seed))
    scale = 1.0 / math.sqrt(d_model)

    def draw() -> np.ndarray:
        return rng.normal(heads * d_model * d_head).reshape(heads, d_model, d_head) * scale

    w_q, w_k, w_v = draw(), draw(), draw()
    w_o = rng.normal(d_model * d_model).reshape(d_model, d_model) * scale
    return AttentionParams(heads=heads, d_model=d_model, w_q=w_q, w_k=w_k, w_v=w_v, w_o=w_o, omega=omega)


def masked_softmax(logits: np.ndarray, additive_mask: np.ndarray) -> np.ndarray:
    """Softmax of logits + mask along the last axis, masked entries exactly 0.

    Accepts a single row or a batch of rows.  A row whose mask is entirely
    non-zero (fully masked) raises MaskedRowError with the row index.
    """
    logits = np.asarray(logits, dtype=np.float64)
    additive_mask = np.asarray(additive_mask, dtype=np.float64)
    if logits.shape != additive_mask.shape:
        raise ValidationError(
            f"logits shape {logits.shape} != mask shape {additive_mask.shape}"
        )
    if not np.isfinite(logits).all():
        raise ValidationError("logits must be finite")
    squeeze = logits.ndim == 1
    if squeeze:
        logits = logits[None, :]
        additive_mask = additive_mask[None, :]

    open_entries = additive_mask == 0.0
    open_rows = open_entries.any(axis=1)
    if not open_rows.all():
        raise MaskedRowError(int(np.flatnonzero(~open_rows)[0]))

    scores = logits + additive_mask
    shifted = scores - scores.max(axis=1, keepdims=True)
    weights = np.exp(shifted)
    weights /= weights.sum(axis=1, keepdims=True)
    weights[weights < WEIGHT_SNAP] = 0.0
    return weights[0] if squeeze else weights


def masked_softmax_grad(
    logits: np.ndarray, additive_mask: np.ndarray, upstream: np.ndarray
) -> np.ndarray:
    """d(upstream . weights)/d(logits) for one row: w * (u - u.w).

    Masked entries have weight exactly 0, so their gradient is exactly 0,
    matching the finite-difference view (the mask absorbs any perturbation).
    """
    weights = masked_softmax(logits, additive_mask)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != weights.shape:
        raise ValidationError("upstream shape must match logits")
    return weights * (upstream - float(np.dot(upstream, weights)))


def sa_mask(
    visual: np.ndarray,
    condition: np.ndarray,
    mask: AttentionMask,
    params: AttentionParams,
    return_weights: bool = False,
):
    """Masked self-attention over the concatenated (m + n, d_model) tokens.

    Returns the (m + n, d_model) output, plus per-head weights
    (heads, m+n, m+n) when asked.
    """
    visual = np.asarray(visual, dtype=np.float64)
    condition = np.asarray(condition, dtype=np.float64)
    if visual.ndim != 2 or condition.ndim != 2:
        raise ValidationError("visual and condition must be 2D (tokens, d_model)")
    if visual.shape[1] != params.d_model or condition.shape[1] != params.d_model:
        raise ValidationError(
            f"token width must be d_model={params.d_model}, got "
            f"{visual.shape[1]} and {condition.shape[1]}"
        )
    if visual.shape[0] != mask.m or condition.shape[0] != mask.n:
        raise ValidationError(
            f"mask is for m={mask.m}, n={mask.n}; got {visual.shape[0]} visual"
            f" and {condition.shape[0]} condition tokens"
        )
    if not (np.isfinite(visual).all() and np.isfinite(condition).all()):
        raise ValidationError("token matrices must be finite")

    tokens = np.concatenate([visual, condition], axis=0)
    additive = mask.dense()
    scale = 1.0 / math.sqrt(params.d_head)

    q = np.einsum("td,hdk->htk", tokens, params.w_q, optimize=False)
    k = np.einsum("td,hdk->htk", tokens, params.w_k, optimize=False)
    v = np.einsum("td,hdk->htk", tokens, params.w_v, optimize=False)
    raw = np.einsum("htk,hsk->hts", q, k, optimize=False) * scale

    total = tokens.shape[0]
    mask_rows = np.tile(additive, (params.heads, 1))
    flat = masked_softmax(raw.reshape(-1, total), mask_rows)
    weights = flat.reshape(params.heads, total, total)
    context = np.einsum("hts,hsk->htk", weights, v, optimize=False)
    merged = np.transpose(context, (1, 0, 2)).reshape(total, params.d_model)
    out = np.einsum("td,de->te", merged, params.w_o, optimize=False)
    if return_weights:
        return out, weights
    return out


def gated_fuse(visual: np.ndarray, attended: np.ndarray, omega: float) -> np.ndarray:
    """Residual fuse: V + tanh(omega) * attended[:m].

    omega == 0 short-circuits to an exact copy of V: the additive path would
    turn -0.0 entries into +0.0 and break bitwise identity.
    """
    visual = np.asarray(visual, dtype=np.float64)
    attended = np.asarray(attended, dtype=np.float64)
    if attended.shape[0] < visual.shape[0] or attended.shape[1] != visual.shape[1]:
        raise ValidationError(
            f"attended shape {attended.shape} cannot fuse into visual {visual.shape}"
        )
    if not math.isfinite(omega):
        raise ValidationError("omega must be finite")
    if omega == 0.0:
        return visual.copy()
    return visual + math.tanh(omega) * attended[: visual.shape[0]]
