"""Additive attention masks over [visual tokens | instance condition tokens].

The assembled mask is (m + n) x (m + n): rows/cols 0..m-1 are visual tokens,
rows/cols m..m+n-1 are instance condition tokens ordered by sorted tracking
id.  Entries are 0 (attend) or "minus infinity", realized as the most
negative finite float64 so the arithmetic stays finite; after softmax's max
subtraction the masked weights underflow to exactly 0, and a final snap of
anything below 1e-30 guarantees it.

Blocks:
- identity (visual row k, condition col m+i and its mirror): open iff
  instance i covers token k;
- trajectory (visual/visual): open iff the two tokens share at least one
  covering instance, under one of two background policies:
  * "foreground-only" (default): pairs with at least one background token
    stay open, so background context flows freely;
  * "strict": such pairs are masked, the literal shared-instance rule;
- condition/condition: "identity-only" (diagonal) by default, or
  "all-open".

The diagonal of the full mask is always open.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import MaskedRowError, ValidationError
from .indicator import IndicatorIndex

NEG_MASK = float(np.finfo(np.float64).min)
WEIGHT_SNAP = 1e-30

POLICIES = ("foreground-only", "strict")
CONDITION_MODES = ("identity-only", "all-open")


def default_instance_order(idx: IndicatorIndex) -> tuple[int, ...]:
    """Condition-token order: sorted tracking ids."""
    return tuple(sorted(idx.instance_ids))


def _check_order(idx: IndicatorIndex, instance_order) -> tuple[int, ...]:
    # The order may name ids absent from the indicator (instances covering
    # no token keep their condition slot), but must not drop a covered id.
    if instance_order is None:
        return default_instance_order(idx)
    order = tuple(int(i) for i in instance_order)
    if len(set(order)) != len(order):
        raise ValidationError(f"instance_order {order} has duplicate ids")
    covered = {iid for iid, toks in idx.inverse if toks}
    missing = covered - set(order)
    if missing:
        raise ValidationError(
            f"instance_order omits covered instance ids {sorted(missing)}"
        )
    return order


def build_identity_block(idx: IndicatorIndex, instance_order=None) -> np.ndarray:
    """Boolean (m, n): entry [k, i] open iff instance_order[i] covers token k."""
    order = _check_order(idx, instance_order)
    inverse = dict(idx.inverse)
    allowed = np.zeros((idx.num_tokens, len(order)), dtype=bool)
    for col, iid in enumerate(order):
        tokens = inverse.get(iid, ())
        if tokens:
            allowed[np.asarray(tokens, dtype=np.intp), col] = True
    return allowed


def build_trajectory_block(idx: IndicatorIndex, policy: str = "foreground-only") -> np.ndarray:
    """Boolean (m, m) visual/visual block under the given background policy.

    The diagonal is forced open under both policies.
    """
    if policy not in POLICIES:
        raise ValidationError(f"unknown policy {policy!r}; choose from {POLICIES}")
    m = idx.num_tokens
    if policy == "foreground-only":
        background = ~idx.foreground()
        allowed = background[:, None] | background[None, :]
    else:
        allowed = np.zeros((m, m), dtype=bool)
    for _iid, tokens in idx.inverse:
        if tokens:
            sel = np.asarray(tokens, dtype=np.intp)
            allowed[np.ix_(sel, sel)] = True
    np.fill_diagonal(allowed, True)
    return allowed


def build_condition_block(n: int, mode: str = "identity-only") -> np.ndarray:
    """Boolean (n, n) condition/condition block."""
    if mode not in CONDITION_MODES:
        raise ValidationError(f"unknown condition mode {mode!r}; choose from {CONDITION_MODES}")
    if n < 0:
        raise ValidationError("n must be >= 0")
    if mode == "all-open":
        return np.ones((n, n), dtype=bool)
    return np.eye(n, dtype=bool)


@dataclass(frozen=True, eq=False)
class AttentionMask:
    """Assembled (m+n)^2 mask.  ``allowed`` is the boolean open-entry matrix;
    the additive float realization comes from ``dense()``."""

    m: int
    n: int
    allowed: np.ndarray

    def __post_init__(self) -> None:
        total = self.m + self.n
        if self.allowed.shape != (total, total) or self.allowed.dtype != np.bool_:
            raise ValidationError(
                f"allowed must be bool ({total}, {total}), got "
                f"{self.allowed.dtype} x {self.allowed.shape}"
            )
        self.allowed.setflags(write=False)

    def dense(self) -> np.ndarray:
        """Additive float64 mask: 0 where open, most-negative-finite where masked."""
        return np.where(self.allowed, 0.0, NEG_MASK)

    def entry(self, row: int, col: int) -> float:
        return 0.0 if self.allowed[row, col] else NEG_MASK

    def unmasked_pairs(self) -> list[tuple[int, int]]:
        return [(int(r), int(c)) for r, c in np.argwhere(self.allowed)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, AttentionMask):
            return NotImplemented
        return (
            self.m == other.m
            and self.n == other.n
            and np.array_equal(self.allowed, other.allowed)
        )


def assemble_mask(
    identity_block: np.ndarray,
    trajectory_block: np.ndarray,
    condition_block: np.ndarray,
) -> AttentionMask:
    """Stitch the three blocks into the full mask and validate it.

    The identity block is mirrored into the condition/visual quadrant, so
    identity pairs are symmetric by construction.  A row that is masked
    everywhere except its diagonal is legal; a fully masked row makes the
    downstream softmax undefined and raises MaskedRowError naming the row.
    """
    identity_block = np.asarray(identity_block, dtype=bool)
    trajectory_block = np.asarray(trajectory_block, dtype=bool)
    condition_block = np.asarray(condition_block, dtype=bool)
    if identity_block.ndim != 2:
        raise ValidationError("identity block must be 2D (m, n)")
    m, n = identity_block.shape
    if trajectory_block.shape != (m, m):
        raise ValidationError(
            f"trajectory block shape {trajectory_block.shape} does not match m={m}"
        )
    if condition_block.shape != (n, n):
        raise ValidationError(
            f"condition block shape {condition_block.shape} does not match n={n}"
        )
    if not np.array_equal(trajectory_block, trajectory_block.T):
        raise ValidationError("trajectory block must be symmetric")
    if not np.array_equal(condition_block, condition_block.T):
        raise ValidationError("condition block must be symmetric")

    allowed = np.zeros((m + n, m + n), dtype=bool)
    allowed[:m, :m] = trajectory_block
    allowed[:m, m:] = identity_block
    allowed[m:, :m] = identity_block.T
    allowed[m:, m:] = condition_block
    open_rows = allowed.any(axis=1)
    if not open_rows.all():
        row = int(np.flatnonzero(~open_rows)[0])
        raise MaskedRowError(row)
    return AttentionMask(m=m, n=n, allowed=allowed)


def build_attention_mask(
    idx: IndicatorIndex,
    policy: str = "foreground-only",
    condition_mode: str = "identity-only",
    instance_order=None,
) -> AttentionMask:
    """The standard full mask for an indicator, in one call."""
    order = _check_order(idx, instance_order)
    return assemble_mask(
        build_identity_block(idx, order),
        build_trajectory_block(idx, policy),
        build_condition_block(len(order), condition_mode),
    )


def sparse_unmasked_pairs(
    idx: IndicatorIndex,
    policy: str = "foreground-only",
    condition_mode: str = "identity-only",
    instance_order=None,
) -> list[tuple[int, int]]:
    """Sorted (row, col) open entries, enumerated from the index directly.

    This is the blocked-sparse realization: per-instance token lists emit
    their pair blocks, background rows/columns are emitted wholesale under
    the foreground-only policy, and the identity/condition blocks follow
    their definitions.  Entrywise equal to the dense realization.
    """
    if policy not in POLICIES:
        raise ValidationError(f"unknown policy {policy!r}; choose from {POLICIES}")
    if condition_mode not in CONDITION_MODES:
        raise ValidationError(f"unknown condition mode {condition_mode!r}")
    order = _check_order(idx, instance_order)
    inverse = dict(idx.inverse)
    m, n = idx.num_tokens, len(order)
    pairs: set[tuple[int, int]] = set()
    for r in range(m + n):
        pairs.add((r, r))
    if policy == "foreground-only":
        background = [k for k in range(m) if not idx.ids_of(k)]
        for k in background:
            for j in range(m):
                pairs.add((k, j))
                pairs.add((j, k))
    for col, iid in enumerate(order):
        tokens = inverse.get(iid, ())
        for k in tokens:
            pairs.add((k, m + col))
            pairs.add((m + col, k))
            for j in tokens:
                pairs.add((k, j))
    if condition_mode == "all-open":
        for a in range(n):
            for b in range(n):
                pairs.add((m + a, m + b))
    return sorted(pairs)


def build_loss_mask(idx: IndicatorIndex) -> np.ndarray:
    """Binary float64 (m,): 1 where the token is covered by any instance."""
    return idx.foreground().astype(np.float64)


# ---------------------------------------------------------------------------
# mask IO: sparse pair list (JSON) and dense sign bitmap (binary)

SPARSE_FORMAT = "instamask-attn-sparse"
SPARSE_VERSION = 1
DENSE_MAGIC = b"AMSK"
DENSE_VERSION = 1
_DENSE_HEADER = struct.Struct("<4sHHII")  # magic, version, pad, m, n


def save_sparse_mask(m: int, n: int, pairs, path) -> None:
    doc = {
        "format": SPARSE_FORMAT,
        "version": SPARSE_VERSION,
        "m": int(m),
        "n": int(n),
        "unmasked": [[int(r), int(c)] for r, c in pairs],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_sparse_mask(path) -> tuple[int, int, list[tuple[int, int]]]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != SPARSE_FORMAT or doc.get("version") != SPARSE_VERSION:
        raise ValidationError("not a sparse mask document")
    m, n = int(doc["m"]), int(doc["n"])
    pairs = [(int(r), int(c)) for r, c in doc["unmasked"]]
    total = m + n
    for r, c in pairs:
        if not (0 <= r < total and 0 <= c < total):
            raise ValidationError(f"pair ({r}, {c}) out of range for m+n={total}")
    return m, n, pairs


def save_dense_mask(mask: AttentionMask, path) -> None:
    header = _DENSE_HEADER.pack(DENSE_MAGIC, DENSE_VERSION, 0, mask.m, mask.n)
    payload = np.packbits(mask.allowed.reshape(-1))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def load_dense_mask(path) -> AttentionMask:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _DENSE_HEADER.size:
        raise ValidationError(f"dense mask file too short: {len(blob)} bytes")
    magic, version, _pad, m, n = _DENSE_HEADER.unpack_from(blob)
    if magic != DENSE_MAGIC:
        raise ValidationError(f"bad dense mask magic {magic!r}")
    if version != DENSE_VERSION:
        raise ValidationError(f"unsupported dense mask version {version}")
    total = m + n
    payload = np.frombuffer(blob, dtype=np.uint8, offset=_DENSE_HEADER.size)
    expected = (total * total + 7) // 8
    if len(payload) != expected:
        raise ValidationError(f"dense mask payload is {len(payload)} bytes, expected {expected}")
    bits = np.unpackbits(payload, count=total * total).astype(bool).reshape(total, total)
    return AttentionMask(m=m, n=n, allowed=bits)
