"""Latent-grid instance masks and the token-to-instance indicator.

Pixel masks live on the T x H x W grid; diffusion tokens live on the
compressed T/f_t x H/f_h x W/f_w grid.  Each latent cell's occupancy is the
exact mean of its f_t x f_h x f_w pixel block (trilinear interpolation onto
block centers with integer factors reduces to the block mean), and the cell
is foreground for an instance when occupancy exceeds the threshold theta.

Token flattening is row-major over (t, row, col):
    k = t * (H_c * W_c) + row * W_c + col
which matches C-order ravel of the latent grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .geometry import PixelMaskStack


@dataclass(frozen=True, eq=False)
class LatentMask:
    """One instance's occupancy on the latent grid.

    ``counts`` holds the integer number of covered pixels per block so mass
    conservation can be checked in exact arithmetic; ``occupancy`` is
    counts / volume and ``binarized`` applies the strict > theta rule.
    """

    instance_id: int
    dims: tuple[int, int, int]  # (T_c, H_c, W_c)
    counts: np.ndarray  # int64, shape dims
    volume: int  # pixels per block, f_t * f_h * f_w
    theta: float

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != tuple(self.dims):
            raise ValidationError(
                f"counts shape {counts.shape} does not match dims {self.dims}"
            )
        if self.volume < 1:
            raise ValidationError(f"block volume must be >= 1, got {self.volume}")
        if counts.min(initial=0) < 0 or counts.max(initial=0) > self.volume:
            raise ValidationError("block counts must lie in [0, volume]")
        if not 0.0 <= self.theta < 1.0:
            raise ValidationError(f"theta must be in [0, 1), got {self.theta}")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def occupancy(self) -> np.ndarray:
        return self.counts / float(self.volume)

    @property
    def binarized(self) -> np.ndarray:
        return self.occupancy > self.theta

    def __eq__(self, other) -> bool:
        if not isinstance(other, LatentMask):
            return NotImplemented
        return (
            self.instance_id == other.instance_id
            and self.dims == other.dims
            and self.volume == other.volume
            and self.theta == other.theta
            and np.array_equal(self.counts, other.counts)
        )


def downsample_trilinear(
    stack: PixelMaskStack, factors: tuple[int, int, int], theta: float = 0.5
) -> LatentMask:
    """Exact block-mean reduction of a pixel mask stack onto the latent grid."""
    f_t, f_h, f_w = (int(f) for f in factors)
    if min(f_t, f_h, f_w) < 1:
        raise ValidationError(f"factors must be positive, got {factors}")
    for value, factor, names in (
        (stack.num_frames, f_t, ("T", "f_t")),
        (stack.height, f_h, ("H", "f_h")),
        (stack.width, f_w, ("W", "f_w")),
    ):
        if value % factor != 0:
            raise ValidationError(f"{names[0]}={value} not divisible by {names[1]}={factor}")
    t_c, h_c, w_c = stack.num_frames // f_t, stack.height // f_h, stack.width // f_w
    blocks = stack.to_array().reshape(t_c, f_t, h_c, f_h, w_c, f_w)
    counts = blocks.sum(axis=(1, 3, 5), dtype=np.int64)
    return LatentMask(
        instance_id=stack.instance_id,
        dims=(t_c, h_c, w_c),
        counts=counts,
        volume=f_t * f_h * f_w,
        theta=float(theta),
    )


@dataclass(frozen=True)
class IndicatorIndex:
    """Token -> instance-id sets and the inverse, over m latent tokens.

    ``forward[k]`` is the sorted tuple of instance ids whose binarized mask
    covers token k; ``inverse`` maps each instance id to its sorted token
    tuple.  Both directions are stored so either lookup is O(1); they must
    describe the same relation.
    """

    num_tokens: int
    forward: tuple[tuple[int, ...], ...]
    inverse: tuple[tuple[int, tuple[int, ...]], ...]

    def __post_init__(self) -> None:
        if self.num_tokens < 0:
            raise ValidationError("num_tokens must be >= 0")
        if len(self.forward) != self.num_tokens:
            raise ValidationError(
                f"forward has {len(self.forward)} entries for m={self.num_tokens}"
            )
        forward = tuple(tuple(sorted(int(i) for i in ids)) for ids in self.forward)
        inverse = tuple(
            (int(iid), tuple(sorted(int(k) for k in toks))) for iid, toks in self.inverse
        )
        ids = [iid for iid, _ in inverse]
        if len(set(ids)) != len(ids):
            raise ValidationError("inverse map has duplicate instance ids")
        if sorted(ids) != ids:
            inverse = tuple(sorted(inverse))
        for iid, toks in inverse:
            for k in toks:
                if not 0 <= k < self.num_tokens:
                    raise ValidationError(f"token {k} out of range for instance {iid}")
        derived: dict[int, list[int]] = {}
        for k, ids_at_k in enumerate(forward):
            for iid in ids_at_k:
                derived.setdefault(iid, []).append(k)
        if derived != {iid: list(toks) for iid, toks in inverse if toks}:
            raise ValidationError("indicator forward/inverse maps disagree")
        object.__setattr__(self, "forward", forward)
        object.__setattr__(self, "inverse", inverse)

    @property
    def instance_ids(self) -> tuple[int, ...]:
        return tuple(iid for iid, _ in self.inverse)

    def ids_of(self, token: int) -> tuple[int, ...]:
        return self.forward[token]

    def tokens_of(self, instance_id: int) -> tuple[int, ...]:
        for iid, toks in self.inverse:
            if iid == instance_id:
                return toks
        raise ValidationError(f"no instance {instance_id} in indicator")

    def foreground(self) -> np.ndarray:
        """Boolean (m,) vector: token has at least one covering instance."""
        return np.array([len(ids) > 0 for ids in self.forward], dtype=bool)


def build_indicator(latent_masks, dims: tuple[int, int, int] | None = None) -> IndicatorIndex:
    """Indicator from per-instance latent masks (all on the same grid).

    ``dims`` is only needed when no masks are given (a zero-instance scene
    still has m background tokens).
    """
    masks = list(latent_masks)
    if not masks:
        if dims is None:
            raise ValidationError("no latent masks given; pass dims for the empty indicator")
        m = dims[0] * dims[1] * dims[2]
        return IndicatorIndex(num_tokens=m, forward=tuple(() for _ in range(m)), inverse=())
    if dims is None:
        dims = masks[0].dims
    for mask in masks:
        if mask.dims != dims:
            raise ValidationError(
                f"latent mask grids disagree: {mask.dims} vs {dims}"
            )
    ids = [mask.instance_id for mask in masks]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate instance ids among latent masks")

    m = dims[0] * dims[1] * dims[2]
    forward: list[list[int]] = [[] for _ in range(m)]
    inverse = []
    for mask in sorted(masks, key=lambda x: x.instance_id):
        tokens = np.flatnonzero(mask.binarized.reshape(-1))
        inverse.append((mask.instance_id, tuple(int(k) for k in tokens)))
        for k in tokens:
            forward[int(k)].append(mask.instance_id)
    return IndicatorIndex(
        num_tokens=m,
        forward=tuple(tuple(ids) for ids in forward),
        inverse=tuple(inverse),
    )


def concat_views(indicators) -> IndicatorIndex:
    """Join per-view indicators into one token axis, view-major.

    Token k of view v becomes token v * m_view + k (views must share m).
    An instance appearing in several views keeps one id with the union of
    its per-view tokens.
    """
    parts = list(indicators)
    if not parts:
        raise ValidationError("concat_views needs at least one indicator")
    m_view = parts[0].num_tokens
    for part in parts:
        if part.num_tokens != m_view:
            raise ValidationError("all views must have the same token count")
    forward: list[tuple[int, ...]] = []
    merged: dict[int, list[int]] = {}
    for v, part in enumerate(parts):
        offset = v * m_view
        forward.extend(part.forward)
        for iid, toks in part.inverse:
            merged.setdefault(iid, []).extend(k + offset for k in toks)
    return IndicatorIndex(
        num_tokens=m_view * len(parts),
        forward=tuple(forward),
        inverse=tuple((iid, tuple(toks)) for iid, toks in sorted(merged.items())),
    )


# ---------------------------------------------------------------------------
# serialization: tokens/ids with empty sets omitted

INDICATOR_FORMAT = "instamask-indicator"
INDICATOR_VERSION = 1


def indicator_to_doc(idx: IndicatorIndex) -> dict:
    return {
        "format": INDICATOR_FORMAT,
        "version": INDICATOR_VERSION,
        "m": idx.num_tokens,
        "forward": [[k, list(ids)] for k, ids in enumerate(idx.forward) if ids],
        "inverse": [[iid, list(toks)] for iid, toks in idx.inverse if toks],
    }


def indicator_from_doc(doc: dict) -> IndicatorIndex:
    if doc.get("format") != INDICATOR_FORMAT or doc.get("version") != INDICATOR_VERSION:
        raise ValidationError("not an indicator document")
    m = doc["m"]
    forward = [() for _ in range(m)]
    for k, ids in doc.get("forward", []):
        if not 0 <= k < m:
            raise ValidationError(f"forward token {k} out of range (m={m})")
        forward[k] = tuple(ids)
    inverse = [(iid, tuple(toks)) for iid, toks in doc.get("inverse", [])]
    # the constructor rejects files whose two directions disagree
    return IndicatorIndex(num_tokens=m, forward=tuple(forward), inverse=tuple(inverse))


def save_indicator(idx: IndicatorIndex, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(indicator_to_doc(idx), fh, indent=2)
        fh.write("\n")


def load_indicator(path) -> IndicatorIndex:
    with open(path, "r", encoding="utf-8") as fh:
        return indicator_from_doc(json.load(fh))
