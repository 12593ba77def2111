"""Command-line entry point.

Subcommands:

* ``gen-scene``       write a deterministic synthetic scene file
* ``build-masks``     scene file -> mask artifacts + manifest
* ``check``           run the self-audit property suites
* ``demo-attention``  run the masked kernel on a fixture and print a
                      leakage report

Exit codes: 0 success, 1 property failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .artifacts import (
    BuildOptions,
    build_bundle,
    check_theta_monotonic,
    verify_artifacts,
    write_artifacts,
)
from .attention import gated_fuse, init_attention_params, sa_mask
from .checks import SUITES, run_check_suites
from .conditioning import build_condition_set, condition_matrix, init_mlp_params
from .errors import ValidationError
from .masks import CONDITION_MODES, POLICIES
from .rng import CounterRng
from .scene import GeneratorSpec, generate_synthetic_scene, load_scene, save_scene


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"{value} is not a positive integer")
    return value


def _unit_interval(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{value} is outside [0, 1]")
    return value


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="instamask",
        description="Instance-level attention masks from 3D box trajectories.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-scene", help="write a deterministic synthetic scene")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output scene JSON path")
    gen.add_argument("--frames", type=_positive_int, default=8)
    gen.add_argument("--height", type=_positive_int, default=64)
    gen.add_argument("--width", type=_positive_int, default=64)
    gen.add_argument(
        "--factors",
        type=_positive_int,
        nargs=3,
        default=None,
        metavar=("F_T", "F_H", "F_W"),
        help="temporal/vertical/horizontal compression factors "
        "(default: 2 8 8, each shrunk to the largest divisor of its dimension)",
    )
    gen.add_argument("--instances", type=int, default=3)
    gen.add_argument("--views", type=_positive_int, default=1)
    gen.add_argument(
        "--occlusion",
        action="store_true",
        help="include an instance whose track has a pose gap",
    )

    build = sub.add_parser("build-masks", help="build mask artifacts from a scene file")
    build.add_argument("scene", help="scene JSON path")
    build.add_argument("--out", required=True, help="output directory")
    build.add_argument("--theta", type=_unit_interval, default=0.5)
    build.add_argument("--policy", choices=POLICIES, default="foreground-only")
    build.add_argument("--condition-mode", choices=CONDITION_MODES, default="identity-only")
    build.add_argument("--view", type=int, default=0)
    build.add_argument(
        "--concat-views", action="store_true", help="concatenate tokens of every view"
    )
    build.add_argument("--no-pgm", action="store_true", help="skip PGM frame previews")
    build.add_argument(
        "--check",
        action="store_true",
        help="verify written artifacts and the threshold subset property",
    )

    chk = sub.add_parser("check", help="run the self-audit property suites")
    chk.add_argument(
        "--suite",
        action="append",
        choices=SUITES,
        help="run only this suite (repeatable, default: all)",
    )
    chk.add_argument("--seed", type=int, default=0)
    chk.add_argument("--alpha", type=_unit_interval, default=0.5)
    chk.add_argument(
        "--tamper",
        action="store_true",
        help="corrupt a written mask artifact before verification",
    )
    chk.add_argument("--report", help="also write the report as JSON")

    demo = sub.add_parser(
        "demo-attention", help="run the masked kernel on a fixture scene"
    )
    demo.add_argument("--seed", type=int, default=0)
    demo.add_argument("--d-model", type=_positive_int, default=64)
    demo.add_argument("--heads", type=_positive_int, default=4)
    demo.add_argument("--bands", type=_positive_int, default=8)
    demo.add_argument("--theta", type=_unit_interval, default=0.5)
    demo.add_argument("--policy", choices=POLICIES, default="foreground-only")
    return parser


def _fit_factor(dim: int, preferred: int) -> int:
    for f in range(min(preferred, dim), 0, -1):
        if dim % f == 0:
            return f
    return 1


def cmd_gen_scene(args) -> int:
    # gap motion first so any instance count >= 1 contains a pose gap
    motions = ("occluded-gap", "linear", "turning") if args.occlusion else ("linear", "turning")
    if args.factors is None:
        factors = (
            _fit_factor(args.frames, 2),
            _fit_factor(args.height, 8),
            _fit_factor(args.width, 8),
        )
    else:
        factors = tuple(args.factors)
    spec = GeneratorSpec(
        num_frames=args.frames,
        height=args.height,
        width=args.width,
        factors=factors,
        num_instances=args.instances,
        num_views=args.views,
        motions=motions,
    )
    scene = generate_synthetic_scene(spec, args.seed)
    save_scene(scene, args.out)
    print(
        f"wrote {args.out}: {scene.num_frames} frames, {scene.height}x{scene.width}, "
        f"{len(scene.instances)} instances, {scene.num_views} views"
    )
    return 0


def cmd_build_masks(args) -> int:
    scene = load_scene(args.scene)
    options = BuildOptions(
        theta=args.theta,
        policy=args.policy,
        condition_mode=args.condition_mode,
        view_id=args.view,
        concat_all_views=args.concat_views,
        write_pgm=not args.no_pgm,
    )
    bundle = build_bundle(scene, options)
    manifest = write_artifacts(bundle, args.out)
    print(
        f"wrote {len(manifest['artifacts'])} artifacts to {args.out} "
        f"(m={bundle.m}, n={bundle.n})"
    )
    if not args.check:
        return 0
    checks = verify_artifacts(args.out)
    checks.extend(check_theta_monotonic(scene, options))
    failed = [c for c in checks if not c.passed]
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        suffix = f": {c.detail}" if c.detail else ""
        print(f"{status} {c.name}{suffix}")
    return 1 if failed else 0


def cmd_check(args) -> int:
    suites = args.suite if args.suite else list(SUITES)
    report = run_check_suites(suites, seed=args.seed, alpha=args.alpha, tamper=args.tamper)
    for name in suites:
        for entry in report["suites"][name]:
            status = "PASS" if entry["passed"] else "FAIL"
            suffix = f": {entry['detail']}" if entry["detail"] else ""
            print(f"{status} [{name}] {entry['name']}{suffix}")
    if args.report:
        Path(args.report).write_text(
            json.dumps(report, indent=2) + "\n", encoding="utf-8"
        )
        print(f"report written to {args.report}")
    return 0 if report["passed"] else 1


def cmd_demo_attention(args) -> int:
    spec = GeneratorSpec(
        num_frames=4, height=64, width=64, factors=(2, 8, 8), num_instances=2
    )
    scene = generate_synthetic_scene(spec, args.seed)
    options = BuildOptions(theta=args.theta, policy=args.policy, write_pgm=False)
    bundle = build_bundle(scene, options)

    params = init_attention_params(args.seed, d_model=args.d_model, heads=args.heads)
    mlp = init_mlp_params(args.seed, d_model=args.d_model, num_bands=args.bands)
    cond = condition_matrix(build_condition_set(scene, mlp), args.d_model)
    rng = CounterRng.from_seed(args.seed).split("demo-visual")
    visual = rng.normal(bundle.m * args.d_model).reshape(bundle.m, args.d_model)

    out, weights = sa_mask(visual, cond, bundle.mask, params, return_weights=True)
    fused = gated_fuse(visual, out, params.omega)

    total = bundle.m + bundle.n
    masked = ~bundle.mask.allowed
    masked_count = int(masked.sum())
    print(f"tokens: {bundle.m} visual + {bundle.n} condition = {total}")
    print(f"masked entries: {masked_count} of {total * total}")

    ok = True
    max_masked_weight = float(np.abs(weights[:, masked]).max()) if masked_count else 0.0
    passed = max_masked_weight == 0.0
    ok &= passed
    print(f"{'PASS' if passed else 'FAIL'} masked attention weights exactly zero "
          f"(max {max_masked_weight})")

    holes = np.argwhere(~bundle.mask.allowed[: bundle.m, bundle.m :])
    if len(holes):
        k, i_cond = (int(v) for v in holes[0])
        bumped = cond.copy()
        bumped[i_cond] += 1e-3
        out2 = sa_mask(visual, bumped, bundle.mask, params)
        drift = float(np.abs(out2[k] - out[k]).max())
        passed = drift < 1e-6
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} perturbing an unrelated condition token "
              f"leaves visual token {k} unchanged (drift {drift})")

    passed = fused.tobytes() == visual.tobytes()
    ok &= passed
    print(f"{'PASS' if passed else 'FAIL'} zero gate returns visual tokens bitwise "
          f"(omega={params.omega})")
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {
        "gen-scene": cmd_gen_scene,
        "build-masks": cmd_build_masks,
        "check": cmd_check,
        "demo-attention": cmd_demo_attention,
    }
    try:
        return handlers[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
