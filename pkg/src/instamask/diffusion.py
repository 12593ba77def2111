"""Forward diffusion, per-token losses, and instance-masked loss variants.

The schedule follows the standard variance-preserving construction:
    z_t = sqrt(abar_t) z_0 + sqrt(1 - abar_t) eps,
    abar_t = prod_{i<=t}(1 - beta_i),
with abar computed by the exact recurrence abar_t = abar_{t-1} * (1 - beta_t)
(cumprod evaluates precisely that product chain), t counted from 1.

Loss shaping: the per-token loss is the squared error summed over channels;
the masked variant averages it over foreground tokens only (tokens covered
by at least one instance), and the dynamic variant applies the masked
branch with probability alpha per step, drawing from an explicit counter
stream so training runs are replayable.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .rng import CounterRng


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Beta schedule and its exact alpha-bar products, 1-indexed by step."""

    betas: np.ndarray

    def __post_init__(self) -> None:
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or len(betas) < 1:
            raise ValidationError("betas must be a non-empty 1D array")
        if not ((betas > 0.0) & (betas < 1.0)).all():
            raise ValidationError("every beta must lie strictly in (0, 1)")
        alpha_bars = np.cumprod(1.0 - betas)
        betas.setflags(write=False)
        alpha_bars.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @property
    def steps(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        if not 1 <= t <= self.steps:
            raise ValidationError(f"step t={t} out of range [1, {self.steps}]")
        return float(self.alpha_bars[t - 1])

    @classmethod
    def linear(cls, steps: int, start: float = 1e-4, end: float = 2e-2) -> "NoiseSchedule":
        if steps < 1:
            raise ValidationError("steps must be >= 1")
        return cls(np.linspace(start, end, steps))

    @classmethod
    def constant(cls, steps: int, beta: float) -> "NoiseSchedule":
        if steps < 1:
            raise ValidationError("steps must be >= 1")
        return cls(np.full(steps, float(beta)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, NoiseSchedule):
            return NotImplemented
        return np.array_equal(self.betas, other.betas)


def forward_noise(z0: np.ndarray, t: int, schedule: NoiseSchedule, noise: np.ndarray) -> np.ndarray:
    """z_t from clean latents and a noise draw of the same shape."""
    z0 = np.asarray(z0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if z0.shape != noise.shape:
        raise ValidationError(f"z0 shape {z0.shape} != noise shape {noise.shape}")
    abar = schedule.alpha_bar(t)
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * noise


def per_token_loss(eps: np.ndarray, eps_pred: np.ndarray) -> np.ndarray:
    """Squared error summed over channels: (m, d) inputs -> (m,) losses."""
    eps = np.asarray(eps, dtype=np.float64)
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    if eps.shape != eps_pred.shape:
        raise ValidationError(f"shape mismatch: {eps.shape} vs {eps_pred.shape}")
    if eps.ndim != 2:
        raise ValidationError(f"expected (tokens, channels), got shape {eps.shape}")
    diff = eps - eps_pred
    return np.einsum("td,td->t", diff, diff, optimize=False)


def _check_weights(weights: np.ndarray, expected_shape: tuple) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != expected_shape:
        raise ValidationError(f"weights shape {weights.shape}, expected {expected_shape}")
    if not np.isin(weights, (0.0, 1.0)).all():
        raise ValidationError("loss-mask weights must be binary")
    return weights


@dataclass(frozen=True)
class MaskedLossResult:
    value: float
    empty_foreground: bool


def masked_loss(
    losses: np.ndarray, weights: np.ndarray, reduction: str = "mean"
) -> MaskedLossResult:
    """Reduce per-token losses over the selected (weight 1) tokens.

    "mean" averages over selected tokens; "sum" adds them.  An all-zero
    mask is not an error: it returns value 0 with empty_foreground set.
    """
    losses = np.asarray(losses, dtype=np.float64)
    if losses.ndim != 1:
        raise ValidationError(f"losses must be 1D per-token values, got shape {losses.shape}")
    weights = _check_weights(weights, losses.shape)
    if reduction not in ("mean", "sum"):
        raise ValidationError(f"unknown reduction {reduction!r}")
    selected = weights == 1.0
    if not selected.any():
        return MaskedLossResult(value=0.0, empty_foreground=True)
    picked = losses[selected]
    value = float(picked.mean()) if reduction == "mean" else float(picked.sum())
    return MaskedLossResult(value=value, empty_foreground=False)


@dataclass(frozen=True)
class DynamicLossResult:
    value: float
    branch: str  # "masked" or "global"
    p: float
    empty_foreground: bool


def dynamic_loss(
    losses: np.ndarray,
    weights: np.ndarray,
    alpha: float,
    rng: CounterRng,
    reduction: str = "mean",
) -> DynamicLossResult:
    """Apply the masked loss with probability alpha, else the global one.

    Draws p uniform in [0, 1) from the caller's stream; the branch taken is
    reported so training code can audit the decision sequence.  alpha = 0
    never masks; alpha = 1 always does (p < 1 holds for every draw).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must be in [0, 1], got {alpha}")
    losses = np.asarray(losses, dtype=np.float64)
    if losses.ndim != 1:
        raise ValidationError(f"losses must be 1D per-token values, got shape {losses.shape}")
    weights = _check_weights(weights, losses.shape)
    p = rng.uniform1()
    if p < alpha:
        masked = masked_loss(losses, weights, reduction)
        return DynamicLossResult(
            value=masked.value, branch="masked", p=p, empty_foreground=masked.empty_foreground
        )
    value = float(losses.mean()) if reduction == "mean" else float(losses.sum())
    return DynamicLossResult(value=value, branch="global", p=p, empty_foreground=False)


def write_branch_log(results, path) -> None:
    """CSV audit log of dynamic-loss decisions: step, p, branch."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "p", "branch"])
        for step, result in enumerate(results):
            writer.writerow([step, repr(result.p), result.branch])


@dataclass(frozen=True)
class GradientCheckReport:
    max_abs_diff: float
    tolerance: float
    passed: bool
    empty_foreground: bool


def gradient_restriction_check(
    tokens: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray,
    w: np.ndarray,
    b: np.ndarray,
    tolerance: float = 1e-10,
) -> GradientCheckReport:
    """Check that masking restricts gradients to foreground contributions.

    Toy denoiser: per-token affine map pred = x W + b.  Route one: analytic
    gradient of the masked mean loss.  Route two: per-token gradients of the
    global mean loss, background entries zeroed, rescaled by m / |F| (the
    mean-normalization factor).  The two must agree to ``tolerance``.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if tokens.ndim != 2 or targets.shape != tokens.shape:
        raise ValidationError("tokens and targets must share a (m, d) shape")
    m, d = tokens.shape
    if w.shape != (d, d) or b.shape != (d,):
        raise ValidationError(f"w must be ({d}, {d}) and b ({d},)")
    weights = _check_weights(weights, (m,))

    residual = tokens @ w + b - targets  # (m, d)
    selected = weights == 1.0
    count = int(selected.sum())
    if count == 0:
        return GradientCheckReport(0.0, tolerance, True, True)

    # route one: differentiate the masked mean directly
    grad_w_masked = 2.0 / count * (tokens[selected].T @ residual[selected])
    grad_b_masked = 2.0 / count * residual[selected].sum(axis=0)

    # route two: assemble from global per-token grads with background zeroed
    zeroed = residual * weights[:, None]
    grad_w_global = (2.0 / m * (tokens.T @ zeroed)) * (m / count)
    grad_b_global = (2.0 / m * zeroed.sum(axis=0)) * (m / count)

    diff = max(
        float(np.abs(grad_w_masked - grad_w_global).max()),
        float(np.abs(grad_b_masked - grad_b_global).max()),
    )
    return GradientCheckReport(diff, tolerance, diff <= tolerance, False)


# ---------------------------------------------------------------------------
# schedule IO

SCHEDULE_FORMAT = "instamask-schedule"
SCHEDULE_VERSION = 1


def save_schedule(schedule: NoiseSchedule, path) -> None:
    doc = {
        "format": SCHEDULE_FORMAT,
        "version": SCHEDULE_VERSION,
        "steps": schedule.steps,
        "beta": [repr(float(b)) for b in schedule.betas],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_schedule(path) -> NoiseSchedule:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != SCHEDULE_FORMAT or doc.get("version") != SCHEDULE_VERSION:
        raise ValidationError("not a schedule document")
    betas = np.array([float(b) for b in doc["beta"]], dtype=np.float64)
    if len(betas) != int(doc["steps"]):
        raise ValidationError("schedule steps field disagrees with beta list length")
    return NoiseSchedule(betas)
