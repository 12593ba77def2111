"""Scene -> mask artifacts pipeline, file layout, and verification.

One build produces, inside an output directory:

    pixel_mask_<id>.bin          bit-packed per-instance pixel masks
    pixel_mask_<id>_f<t>.pgm     per-frame PGM renders of the same
    latent_masks.json            per-instance block counts on the latent grid
    indicator.json               token <-> instance index
    attention_mask_sparse.json   open (row, col) pairs
    attention_mask_dense.bin     sign bitmap of the full mask
    loss_mask.json               foreground token list
    manifest.json                sha256 of every artifact plus the options

Everything is deterministic for a given scene and options: reruns and
different worker caps produce byte-identical files.  The CONSIS_MASK_THREADS
environment variable caps the per-instance worker pool; results are
assembled in instance order regardless of scheduling.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .geometry import PixelMaskStack, build_mask_stack, read_mask_stack, write_frame_pgm, write_mask_stack
from .indicator import (
    IndicatorIndex,
    build_indicator,
    concat_views,
    downsample_trilinear,
    load_indicator,
    save_indicator,
)
from .masks import (
    AttentionMask,
    build_attention_mask,
    build_loss_mask,
    load_dense_mask,
    load_sparse_mask,
    save_dense_mask,
    save_sparse_mask,
    sparse_unmasked_pairs,
)
from .scene import Scene

THREADS_ENV = "CONSIS_MASK_THREADS"


def thread_cap() -> int:
    """Worker cap from CONSIS_MASK_THREADS (default 1); must be an int >= 1."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return 1
    try:
        cap = int(raw)
    except ValueError:
        raise ValidationError(f"{THREADS_ENV} must be an integer >= 1, got {raw!r}") from None
    if cap < 1:
        raise ValidationError(f"{THREADS_ENV} must be an integer >= 1, got {raw!r}")
    return cap


def _map_in_order(fn, items):
    items = list(items)
    cap = thread_cap()
    if cap == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=cap) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class BuildOptions:
    """Option surface of the mask build; mirrors the CLI flags."""

    theta: float = 0.5
    policy: str = "foreground-only"
    condition_mode: str = "identity-only"
    view_id: int = 0
    concat_all_views: bool = False
    write_pgm: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.theta < 1.0:
            raise ValidationError(f"theta must be in [0, 1), got {self.theta}")


@dataclass(frozen=True)
class MaskBundle:
    """Everything the build derives from a scene, in memory."""

    scene: Scene
    options: BuildOptions
    stacks: tuple[PixelMaskStack, ...]
    latents: tuple
    indicator: IndicatorIndex
    mask: AttentionMask
    loss_mask: np.ndarray
    instance_order: tuple[int, ...]

    @property
    def m(self) -> int:
        return self.mask.m

    @property
    def n(self) -> int:
        return self.mask.n


def build_bundle(scene: Scene, options: BuildOptions = BuildOptions()) -> MaskBundle:
    """Run the full pipeline for one scene."""
    if options.concat_all_views:
        view_ids = scene.view_ids
    else:
        if options.view_id not in scene.view_ids:
            raise ValidationError(
                f"view {options.view_id} not in scene views {scene.view_ids}"
            )
        view_ids = (options.view_id,)

    per_view_indices = []
    stacks: list[PixelMaskStack] = []
    latents: list = []
    for view_id in view_ids:
        view_stacks = _map_in_order(
            lambda inst: build_mask_stack(inst, scene, view_id), scene.instances
        )
        view_latents = [
            downsample_trilinear(stack, scene.factors, options.theta) for stack in view_stacks
        ]
        per_view_indices.append(
            build_indicator(view_latents, dims=scene.latent_dims)
        )
        if view_id == view_ids[0]:
            stacks = list(view_stacks)
            latents = list(view_latents)
    idx = per_view_indices[0] if len(per_view_indices) == 1 else concat_views(per_view_indices)

    mask = build_attention_mask(idx, options.policy, options.condition_mode)
    return MaskBundle(
        scene=scene,
        options=options,
        stacks=tuple(stacks),
        latents=tuple(latents),
        indicator=idx,
        mask=mask,
        loss_mask=build_loss_mask(idx),
        instance_order=tuple(sorted(idx.instance_ids)),
    )


# ---------------------------------------------------------------------------
# file layout

LATENTS_FORMAT = "instamask-latent-masks"
LOSS_FORMAT = "instamask-loss-mask"
MANIFEST_FORMAT = "instamask-manifest"
FORMAT_VERSION = 1


def _dump_json(doc: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def write_artifacts(bundle: MaskBundle, outdir) -> dict:
    """Write all artifacts plus the manifest; returns the manifest document."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    names: list[str] = []

    for stack in bundle.stacks:
        name = f"pixel_mask_{stack.instance_id}.bin"
        write_mask_stack(stack, outdir / name)
        names.append(name)
        if bundle.options.write_pgm:
            for t in range(stack.num_frames):
                pgm = f"pixel_mask_{stack.instance_id}_f{t}.pgm"
                write_frame_pgm(stack, t, outdir / pgm)
                names.append(pgm)

    latents_doc = {
        "format": LATENTS_FORMAT,
        "version": FORMAT_VERSION,
        "dims": list(bundle.scene.latent_dims),
        "volume": int(np.prod(bundle.scene.factors)),
        "theta": repr(bundle.options.theta),
        "masks": [
            {
                "instance_id": lat.instance_id,
                "counts": [int(c) for c in lat.counts.reshape(-1)],
            }
            for lat in bundle.latents
        ],
    }
    _dump_json(latents_doc, outdir / "latent_masks.json")
    names.append("latent_masks.json")

    save_indicator(bundle.indicator, outdir / "indicator.json")
    names.append("indicator.json")

    pairs = sparse_unmasked_pairs(
        bundle.indicator, bundle.options.policy, bundle.options.condition_mode
    )
    save_sparse_mask(bundle.m, bundle.n, pairs, outdir / "attention_mask_sparse.json")
    names.append("attention_mask_sparse.json")

    save_dense_mask(bundle.mask, outdir / "attention_mask_dense.bin")
    names.append("attention_mask_dense.bin")

    loss_doc = {
        "format": LOSS_FORMAT,
        "version": FORMAT_VERSION,
        "m": bundle.m,
        "foreground": [int(k) for k in np.flatnonzero(bundle.loss_mask)],
    }
    _dump_json(loss_doc, outdir / "loss_mask.json")
    names.append("loss_mask.json")

    manifest = {
        "format": MANIFEST_FORMAT,
        "version": FORMAT_VERSION,
        "options": {
            "theta": repr(bundle.options.theta),
            "policy": bundle.options.policy,
            "condition_mode": bundle.options.condition_mode,
            "view_id": bundle.options.view_id,
            "concat_all_views": bundle.options.concat_all_views,
        },
        "m": bundle.m,
        "n": bundle.n,
        "instance_order": list(bundle.instance_order),
        "artifacts": [
            {"name": name, "sha256": _sha256(outdir / name), "bytes": (outdir / name).stat().st_size}
            for name in sorted(names)
        ],
    }
    _dump_json(manifest, outdir / "manifest.json")
    return manifest


def load_loss_mask(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != LOSS_FORMAT or doc.get("version") != FORMAT_VERSION:
        raise ValidationError("not a loss mask document")
    out = np.zeros(int(doc["m"]), dtype=np.float64)
    for k in doc["foreground"]:
        if not 0 <= int(k) < len(out):
            raise ValidationError(f"foreground token {k} out of range")
        out[int(k)] = 1.0
    return out


@dataclass(frozen=True)
class ArtifactCheck:
    name: str
    passed: bool
    detail: str = ""


def verify_artifacts(outdir) -> list[ArtifactCheck]:
    """Re-read a build directory and cross-check every redundant encoding.

    Named invariants: manifest hashes, indicator consistency (enforced on
    load), dense/sparse entrywise agreement, dense mask vs indicator
    definition, and loss mask vs indicator foreground.
    """
    outdir = Path(outdir)
    results: list[ArtifactCheck] = []
    with open(outdir / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)

    bad_hashes = [
        entry["name"]
        for entry in manifest["artifacts"]
        if _sha256(outdir / entry["name"]) != entry["sha256"]
    ]
    results.append(
        ArtifactCheck(
            "manifest hashes match artifact bytes",
            not bad_hashes,
            f"stale: {bad_hashes}" if bad_hashes else "",
        )
    )

    try:
        idx = load_indicator(outdir / "indicator.json")
        results.append(ArtifactCheck("indicator forward/inverse consistency", True))
    except ValidationError as exc:
        results.append(ArtifactCheck("indicator forward/inverse consistency", False, str(exc)))
        return results

    dense = load_dense_mask(outdir / "attention_mask_dense.bin")
    m, n, pairs = load_sparse_mask(outdir / "attention_mask_sparse.json")
    sparse_ok = (m, n) == (dense.m, dense.n) and sorted(pairs) == dense.unmasked_pairs()
    results.append(
        ArtifactCheck(
            "dense/sparse mask entrywise agreement",
            sparse_ok,
            "" if sparse_ok else "dense bitmap and sparse pair list disagree",
        )
    )

    # the indicator file omits instances covering no token, so the condition
    # axis is rebuilt from the manifest's instance order
    policy = manifest["options"]["policy"]
    condition_mode = manifest["options"]["condition_mode"]
    order = [int(i) for i in manifest["instance_order"]]
    rebuilt = build_attention_mask(idx, policy, condition_mode, instance_order=order)
    rebuilt_ok = rebuilt == dense
    results.append(
        ArtifactCheck(
            "dense mask matches indicator definition",
            rebuilt_ok,
            "" if rebuilt_ok else "mask entries contradict the indicator",
        )
    )

    loss = load_loss_mask(outdir / "loss_mask.json")
    loss_ok = len(loss) == idx.num_tokens and bool(
        np.array_equal(loss > 0, idx.foreground())
    )
    results.append(
        ArtifactCheck(
            "loss mask matches indicator foreground",
            loss_ok,
            "" if loss_ok else "foreground sets disagree",
        )
    )
    return results


def check_theta_monotonic(scene: Scene, options: BuildOptions) -> list[ArtifactCheck]:
    """Raising theta can only shrink the indicator: probe theta/2 and
    (theta+1)/2 and check the subset chain."""
    results = []
    low = BuildOptions(
        theta=options.theta / 2.0,
        policy=options.policy,
        condition_mode=options.condition_mode,
        view_id=options.view_id,
        concat_all_views=options.concat_all_views,
        write_pgm=False,
    )
    high_theta = (options.theta + 1.0) / 2.0
    high = BuildOptions(
        theta=min(high_theta, np.nextafter(1.0, 0.0)),
        policy=options.policy,
        condition_mode=options.condition_mode,
        view_id=options.view_id,
        concat_all_views=options.concat_all_views,
        write_pgm=False,
    )
    mid_idx = build_bundle(scene, options).indicator
    low_idx = build_bundle(scene, low).indicator
    high_idx = build_bundle(scene, high).indicator

    def is_subset(a: IndicatorIndex, b: IndicatorIndex) -> bool:
        return all(
            set(a.forward[k]) <= set(b.forward[k]) for k in range(a.num_tokens)
        )

    ok = is_subset(high_idx, mid_idx) and is_subset(mid_idx, low_idx)
    results.append(
        ArtifactCheck(
            "indicator shrinks as theta grows",
            ok,
            "" if ok else f"subset chain broken for thetas {low.theta}, {options.theta}, {high.theta}",
        )
    )
    return results
