"""Self-contained property suites behind the ``check`` CLI subcommand.

Each suite re-derives a contract from its definition and compares against
the implementation, reporting named pass/fail results.  These are smaller
siblings of the test-suite properties so a deployed install can audit
itself without pytest.
"""

from __future__ import annotations

import math
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import artifacts as artifacts_mod
from .attention import gated_fuse, init_attention_params, masked_softmax, masked_softmax_grad, sa_mask
from .conditioning import condition_matrix, build_condition_set, init_mlp_params
from .diffusion import NoiseSchedule, dynamic_loss, forward_noise, masked_loss
from .errors import ValidationError
from .geometry import ProjectedPolygon, rasterize
from .masks import NEG_MASK
from .rng import CounterRng
from .scene import GeneratorSpec, generate_synthetic_scene

SUITES = ("rasterization", "masks", "leakage", "softmax", "schedule")


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _point_in_polygon(verts, px: float, py: float) -> bool:
    # definitional center rule: inside or on every edge's left half-plane
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        if (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1) < 0.0:
            return False
    return True


def _int_hull(points):
    """Monotone chain on integer points (exact arithmetic), counterclockwise."""
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    return hull if len(hull) >= 3 else [pts[0], pts[-1]]


def random_convex_polygon(rng: CounterRng, span: int, min_area_px: float = 1.0):
    """Convex polygon with vertices on the 1/16 pixel grid and area >=
    min_area_px, built with exact integer hull arithmetic."""
    while True:
        count = rng.randint1(3, 9)
        pts = [
            (rng.randint1(-16, span * 16), rng.randint1(-16, span * 16))
            for _ in range(count)
        ]
        hull = _int_hull(pts)
        if len(hull) < 3:
            continue
        area2 = 0
        for i in range(len(hull)):
            x1, y1 = hull[i]
            x2, y2 = hull[(i + 1) % len(hull)]
            area2 += x1 * y2 - x2 * y1
        if area2 / 2.0 < min_area_px * 256.0:  # grid units are 1/16 px
            continue
        return ProjectedPolygon(
            vertices=tuple((x / 16.0, y / 16.0) for x, y in hull), degenerate=False
        )


def suite_rasterization(seed: int, trials: int = 40) -> list[CheckResult]:
    rng = CounterRng.from_seed(seed).split("check-raster")
    mismatches = 0
    for _ in range(trials):
        height = rng.randint1(4, 33)
        width = rng.randint1(4, 33)
        poly = random_convex_polygon(rng, span=max(height, width))
        got = rasterize(poly, height, width)
        for r in range(height):
            for c in range(width):
                want = _point_in_polygon(poly.vertices, c + 0.5, r + 0.5)
                if want != bool(got[r, c]):
                    mismatches += 1
    return [
        CheckResult(
            "raster coverage equals the center-in-polygon rule",
            mismatches == 0,
            f"{mismatches} pixel mismatches over {trials} polygons" if mismatches else "",
        )
    ]


def _definitional_mask_mismatch(bundle) -> str:
    idx = bundle.indicator
    order = bundle.instance_order
    m, n = bundle.m, bundle.n
    sets = [set(idx.forward[k]) for k in range(m)]
    for k in range(m):
        for i, iid in enumerate(order):
            want = 0.0 if iid in sets[k] else NEG_MASK
            if bundle.mask.entry(k, m + i) != want or bundle.mask.entry(m + i, k) != want:
                return f"identity entry ({k}, {m + i})"
    strict = bundle.options.policy == "strict"
    for k in range(m):
        for j in range(m):
            if k == j:
                want = 0.0
            elif strict:
                want = 0.0 if sets[k] & sets[j] else NEG_MASK
            else:
                if not sets[k] or not sets[j]:
                    want = 0.0
                else:
                    want = 0.0 if sets[k] & sets[j] else NEG_MASK
            if bundle.mask.entry(k, j) != want:
                return f"trajectory entry ({k}, {j})"
    for k in range(m):
        want = 1.0 if sets[k] else 0.0
        if bundle.loss_mask[k] != want:
            return f"loss mask token {k}"
    return ""


def suite_masks(seed: int, trials: int = 6, tamper: bool = False) -> list[CheckResult]:
    results = []
    bad = ""
    for i in range(trials):
        spec = GeneratorSpec(
            num_frames=4,
            height=64,
            width=64,
            factors=(2, 8, 8),
            num_instances=1 + (i % 3),
            motions=("linear", "turning", "occluded-gap") if i % 2 else ("linear",),
        )
        bundle = artifacts_mod.build_bundle(generate_synthetic_scene(spec, seed + i))
        bad = _definitional_mask_mismatch(bundle)
        if bad:
            break
        allowed = bundle.mask.allowed
        if not np.array_equal(allowed, allowed.T):
            bad = "assembled mask not symmetric"
            break
        if not allowed.diagonal().all():
            bad = "mask diagonal not fully open"
            break
    results.append(
        CheckResult("masks match their set definitions", bad == "", bad)
    )

    # artifact leg: write, optionally corrupt, verify
    scene = generate_synthetic_scene(
        GeneratorSpec(num_frames=4, height=64, width=64, factors=(2, 8, 8), num_instances=2),
        seed,
    )
    bundle = artifacts_mod.build_bundle(scene)
    with tempfile.TemporaryDirectory() as tmp:
        artifacts_mod.write_artifacts(bundle, tmp)
        if tamper:
            target = Path(tmp) / "attention_mask_dense.bin"
            blob = bytearray(target.read_bytes())
            blob[-1] ^= 0xFF  # flip payload bits, not the header
            target.write_bytes(bytes(blob))
        for check in artifacts_mod.verify_artifacts(tmp):
            results.append(CheckResult(check.name, check.passed, check.detail))
    return results


def suite_leakage(seed: int, trials: int = 3) -> list[CheckResult]:
    rng = CounterRng.from_seed(seed).split("check-leakage")
    worst_identity = 0.0
    worst_masked_weight = 0.0
    zero_gate_ok = True
    for i in range(trials):
        spec = GeneratorSpec(
            num_frames=4, height=64, width=64, factors=(2, 8, 8), num_instances=2
        )
        scene = generate_synthetic_scene(spec, seed + 17 * i)
        bundle = artifacts_mod.build_bundle(scene)
        if bundle.n == 0:
            continue
        d_model = 32
        params = init_attention_params(seed + i, d_model=d_model, heads=2)
        mlp = init_mlp_params(seed + i, d_model=d_model)
        cond = condition_matrix(build_condition_set(scene, mlp), d_model)
        visual = rng.normal(bundle.m * d_model).reshape(bundle.m, d_model)

        out, weights = sa_mask(visual, cond, bundle.mask, params, return_weights=True)
        masked_entries = ~bundle.mask.allowed
        if masked_entries.any():
            worst_masked_weight = max(
                worst_masked_weight, float(np.abs(weights[:, masked_entries]).max())
            )
        zero_gate_ok &= gated_fuse(visual, out, 0.0).tobytes() == visual.tobytes()

        # perturb a condition token not covering some visual token
        open_cols = bundle.mask.allowed[: bundle.m, bundle.m :]
        holes = np.argwhere(~open_cols)
        if len(holes) == 0:
            continue
        k, i_cond = (int(v) for v in holes[0])
        bumped = cond.copy()
        bumped[i_cond] += 1e-3
        out2 = sa_mask(visual, bumped, bundle.mask, params)
        worst_identity = max(worst_identity, float(np.abs(out2[k] - out[k]).max()))
    return [
        CheckResult(
            "masked attention weights are exactly zero",
            worst_masked_weight == 0.0,
            f"max masked weight {worst_masked_weight}",
        ),
        CheckResult(
            "non-covering condition tokens cannot reach a visual token",
            worst_identity < 1e-6,
            f"max finite-difference {worst_identity}",
        ),
        CheckResult("zero gate leaves visual tokens bitwise intact", bool(zero_gate_ok)),
    ]


def suite_softmax(seed: int) -> list[CheckResult]:
    results = []
    w = masked_softmax(np.array([1.0, 2.0, 3.0]), np.array([0.0, NEG_MASK, 0.0]))
    expected = np.array([1.0 / (1.0 + math.exp(2.0)), 0.0, math.exp(2.0) / (1.0 + math.exp(2.0))])
    results.append(
        CheckResult(
            "two-survivor softmax matches the closed form",
            bool(np.allclose(w, expected, atol=1e-12) and w[1] == 0.0),
            f"got {w}",
        )
    )

    rng = CounterRng.from_seed(seed).split("check-softmax")
    logits = rng.normal(8)
    mask = np.where(rng.uniform(8) < 0.3, NEG_MASK, 0.0)
    mask[0] = 0.0
    upstream = rng.normal(8)
    grad = masked_softmax_grad(logits, mask, upstream)
    fd = np.zeros(8)
    h = 1e-6
    for j in range(8):
        up = logits.copy()
        down = logits.copy()
        up[j] += h
        down[j] -= h
        fd[j] = (
            float(np.dot(upstream, masked_softmax(up, mask)))
            - float(np.dot(upstream, masked_softmax(down, mask)))
        ) / (2 * h)
    scale = max(1.0, float(np.abs(fd).max()))
    ok = float(np.abs(grad - fd).max()) / scale < 1e-5
    results.append(
        CheckResult(
            "softmax analytic gradient matches central differences",
            ok,
            f"max rel diff {float(np.abs(grad - fd).max()) / scale}",
        )
    )
    return results


def suite_schedule(seed: int, alpha: float = 0.5) -> list[CheckResult]:
    results = []
    sched = NoiseSchedule.constant(2, 0.1)
    results.append(
        CheckResult(
            "constant beta 0.1 gives alpha-bar (0.9, 0.81)",
            sched.alpha_bar(1) == 0.9 and sched.alpha_bar(2) == 0.81,
            f"got {sched.alpha_bars}",
        )
    )
    lin = NoiseSchedule.linear(50)
    recurrence = all(
        lin.alpha_bars[t] == lin.alpha_bars[t - 1] * (1.0 - lin.betas[t])
        for t in range(1, lin.steps)
    )
    results.append(CheckResult("alpha-bar follows the exact recurrence", recurrence))

    rng = CounterRng.from_seed(seed).split("check-schedule")
    n = 20000
    t = lin.steps // 2
    z0 = rng.normal(n)
    eps = rng.normal(n)
    zt = forward_noise(z0[:, None], t, lin, eps[:, None])[:, 0]
    var = float(zt.var(ddof=1))
    sigma = math.sqrt(2.0 / (n - 1))
    results.append(
        CheckResult(
            "forward-noised variance stays unit",
            abs(var - 1.0) <= 3 * sigma,
            f"var {var} vs 3-sigma band {3 * sigma}",
        )
    )

    losses = rng.normal(8) ** 2
    weights = (rng.uniform(8) < 0.5).astype(np.float64)
    draws = 20000
    branch_rng = rng.split("branches")
    probe = branch_rng.clone()
    expected_ps = probe.uniform(draws)
    masked_count = 0
    drawn_ps = np.empty(draws)
    for i in range(draws):
        result = dynamic_loss(losses, weights, alpha, branch_rng)
        masked_count += result.branch == "masked"
        drawn_ps[i] = result.p
    frequency_ok = abs(masked_count / draws - alpha) <= 3 * math.sqrt(
        max(alpha * (1 - alpha), 1e-12) / draws
    )
    stream_ok = bool(np.array_equal(drawn_ps, expected_ps))
    results.append(
        CheckResult(
            f"masked branch frequency tracks alpha={alpha}",
            frequency_ok and stream_ok,
            f"frequency {masked_count / draws}",
        )
    )
    return results


def run_check_suites(
    suites, seed: int = 0, alpha: float = 0.5, tamper: bool = False
) -> dict:
    chosen = list(suites)
    for name in chosen:
        if name not in SUITES:
            raise ValidationError(f"unknown suite {name!r}; choose from {SUITES}")
    report: dict = {"seed": seed, "suites": {}}
    all_passed = True
    for name in chosen:
        if name == "rasterization":
            results = suite_rasterization(seed)
        elif name == "masks":
            results = suite_masks(seed, tamper=tamper)
        elif name == "leakage":
            results = suite_leakage(seed)
        elif name == "softmax":
            results = suite_softmax(seed)
        else:
            results = suite_schedule(seed, alpha=alpha)
        report["suites"][name] = [asdict(r) for r in results]
        all_passed &= all(r.passed for r in results)
    report["passed"] = bool(all_passed)
    return report
