"""Read-only bundle producers over the instamask build pipeline.

instamask builds masks in process through its public API, and its
``build-masks`` CLI exports the same arrays as files.  This module
exposes both routes as one frozen bundle type so a consumer can take
whichever is closer and trust that the values agree bitwise:

* ``bound_build_masks``   run the in-process pipeline on a scene file;
* ``bound_load_exports``  parse a build output directory back into
  arrays, with local readers written against the documented formats;
* ``bound_load_scene``    load a scene file and report its dimensions.

Producers only: every call returns fresh immutable data, nothing here
writes a file or mutates its inputs.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

from instamask import BuildOptions, build_bundle, load_scene

# additive realization of a masked entry; the dense file stores only the
# open/masked bit, this constant is its documented float meaning
NEG_ENTRY = float(np.finfo(np.float64).min)

_DENSE_HEADER = struct.Struct("<4sHHII")  # magic, version, pad, m, n
_DENSE_MAGIC = b"AMSK"
_DENSE_VERSION = 1
_FORMAT_VERSION = 1
_MANIFEST_FORMAT = "instamask-manifest"
_LOSS_FORMAT = "instamask-loss-mask"
_INDICATOR_FORMAT = "instamask-indicator"


@dataclass(frozen=True)
class BoundMaskBundle:
    """Frozen view of one mask build: plain arrays plus index metadata.

    ``dense`` is the additive (m+n, m+n) float64 mask, 0.0 on open
    entries and the most negative finite float64 on masked ones;
    ``loss_mask`` is the (m,) float64 foreground weight vector;
    ``forward`` maps every visual token index to the tuple of instance
    ids covering it (empty for background); ``dims`` holds ``m``, ``n``,
    ``tokens`` = m + n, and the condition-axis ``instance_order``.
    """

    dense: np.ndarray
    loss_mask: np.ndarray
    forward: Mapping[int, tuple[int, ...]]
    dims: Mapping[str, object]

    def __post_init__(self) -> None:
        dims = dict(self.dims)
        missing = {"m", "n", "tokens", "instance_order"} - dims.keys()
        if missing:
            raise ValueError(f"dims is missing {sorted(missing)}")
        m, n = int(dims["m"]), int(dims["n"])
        order = tuple(int(i) for i in dims["instance_order"])
        if m < 0 or n < 0:
            raise ValueError(f"m and n must be >= 0, got m={m}, n={n}")
        if len(order) != n:
            raise ValueError(f"instance_order has {len(order)} ids for n={n}")
        if int(dims["tokens"]) != m + n:
            raise ValueError(f"tokens={dims['tokens']} is not m+n={m + n}")

        dense = np.array(self.dense, dtype=np.float64)
        if dense.shape != (m + n, m + n):
            raise ValueError(f"dense shape {dense.shape}, expected {(m + n, m + n)}")
        if not np.all((dense == 0.0) | (dense == NEG_ENTRY)):
            raise ValueError(
                "dense entries must be 0.0 or the most negative finite float64"
            )
        loss = np.array(self.loss_mask, dtype=np.float64)
        if loss.shape != (m,):
            raise ValueError(f"loss_mask shape {loss.shape}, expected ({m},)")
        if not np.all((loss == 0.0) | (loss == 1.0)):
            raise ValueError("loss_mask entries must be 0.0 or 1.0")

        forward = {
            int(k): tuple(int(i) for i in ids) for k, ids in dict(self.forward).items()
        }
        if sorted(forward) != list(range(m)):
            raise ValueError(f"forward must cover tokens 0..{m - 1} exactly")
        covered = np.array([len(forward[k]) > 0 for k in range(m)], dtype=bool)
        if not np.array_equal(covered, loss == 1.0):
            raise ValueError("loss_mask foreground disagrees with the forward map")

        dense.setflags(write=False)
        loss.setflags(write=False)
        object.__setattr__(self, "dense", dense)
        object.__setattr__(self, "loss_mask", loss)
        object.__setattr__(self, "forward", MappingProxyType(forward))
        object.__setattr__(
            self,
            "dims",
            MappingProxyType(
                {"m": m, "n": n, "tokens": m + n, "instance_order": order}
            ),
        )

    @property
    def m(self) -> int:
        return self.dims["m"]

    @property
    def n(self) -> int:
        return self.dims["n"]


def _normalize_options(options) -> BuildOptions:
    if options is None:
        return BuildOptions()
    if isinstance(options, BuildOptions):
        return options
    return BuildOptions(**dict(options))


def bound_build_masks(
    scene_path, options: BuildOptions | Mapping[str, object] | None = None
) -> BoundMaskBundle:
    """Build the mask bundle for a scene file, in process.

    ``options`` mirrors the ``build-masks`` option surface: a
    ``BuildOptions`` or a mapping with any of ``theta``, ``policy``,
    ``condition_mode``, ``view_id``, ``concat_all_views``, ``write_pgm``
    (the last only matters to artifact writers; bundles carry no
    previews).  Errors raised by the underlying loader and builder
    propagate unchanged.
    """
    opts = _normalize_options(options)
    scene = load_scene(scene_path)
    bundle = build_bundle(scene, opts)
    return BoundMaskBundle(
        dense=bundle.mask.dense(),
        loss_mask=bundle.loss_mask,
        forward={k: ids for k, ids in enumerate(bundle.indicator.forward)},
        dims={
            "m": bundle.m,
            "n": bundle.n,
            "tokens": bundle.m + bundle.n,
            "instance_order": bundle.instance_order,
        },
    )


def _read_json(path: Path, expected_format: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != expected_format or doc.get("version") != _FORMAT_VERSION:
        raise ValueError(
            f"{path.name} is not a {expected_format} v{_FORMAT_VERSION} document"
        )
    return doc


def _read_dense(path: Path) -> tuple[int, int, np.ndarray]:
    blob = path.read_bytes()
    if len(blob) < _DENSE_HEADER.size:
        raise ValueError(f"{path.name} is too short for a dense mask header")
    magic, version, _pad, m, n = _DENSE_HEADER.unpack_from(blob)
    if magic != _DENSE_MAGIC or version != _DENSE_VERSION:
        raise ValueError(
            f"{path.name} has magic {magic!r} version {version}, expected "
            f"{_DENSE_MAGIC!r} version {_DENSE_VERSION}"
        )
    total = m + n
    payload = np.frombuffer(blob, dtype=np.uint8, offset=_DENSE_HEADER.size)
    if len(payload) != (total * total + 7) // 8:
        raise ValueError(
            f"{path.name} payload is {len(payload)} bytes for m+n={total}"
        )
    bits = (
        np.unpackbits(payload, count=total * total).astype(bool).reshape(total, total)
    )
    return int(m), int(n), np.where(bits, 0.0, NEG_ENTRY)


def bound_load_exports(out_dir) -> BoundMaskBundle:
    """Parse a ``build-masks`` output directory back into a bundle.

    Reads the manifest, dense mask, loss mask, and indicator files with
    readers local to this package; nothing is recomputed from the scene,
    so comparing the result against ``bound_build_masks`` exercises the
    file formats end to end.  Raises ``ValueError`` when the files are
    not a consistent build, ``OSError`` when they are missing.
    """
    out = Path(out_dir)
    manifest = _read_json(out / "manifest.json", _MANIFEST_FORMAT)
    m, n = int(manifest["m"]), int(manifest["n"])
    order = tuple(int(i) for i in manifest["instance_order"])

    dense_m, dense_n, dense = _read_dense(out / "attention_mask_dense.bin")
    if (dense_m, dense_n) != (m, n):
        raise ValueError(
            f"dense mask has m={dense_m}, n={dense_n}; manifest says m={m}, n={n}"
        )

    loss_doc = _read_json(out / "loss_mask.json", _LOSS_FORMAT)
    if int(loss_doc["m"]) != m:
        raise ValueError(f"loss mask covers m={loss_doc['m']}; manifest says m={m}")
    loss = np.zeros(m, dtype=np.float64)
    for k in loss_doc["foreground"]:
        if not 0 <= int(k) < m:
            raise ValueError(f"foreground token {k} out of range (m={m})")
        loss[int(k)] = 1.0

    ind_doc = _read_json(out / "indicator.json", _INDICATOR_FORMAT)
    if int(ind_doc["m"]) != m:
        raise ValueError(f"indicator covers m={ind_doc['m']}; manifest says m={m}")
    forward: dict[int, tuple[int, ...]] = {k: () for k in range(m)}
    for k, ids in ind_doc.get("forward", []):
        if not 0 <= int(k) < m:
            raise ValueError(f"indicator token {k} out of range (m={m})")
        forward[int(k)] = tuple(int(i) for i in ids)

    return BoundMaskBundle(
        dense=dense,
        loss_mask=loss,
        forward=forward,
        dims={"m": m, "n": n, "tokens": m + n, "instance_order": order},
    )


def bound_load_scene(scene_path) -> Mapping[str, object]:
    """Load and validate a scene file; returns a read-only summary.

    Keys: ``num_frames``, ``height``, ``width``, ``factors``,
    ``latent_dims``, ``tokens_per_view``, ``view_ids``, and
    ``instances`` (tuples of tracking id, category, size mappings).
    Loader errors propagate unchanged.
    """
    scene = load_scene(scene_path)
    t_c, h_c, w_c = scene.latent_dims
    instances = tuple(
        MappingProxyType(
            {
                "tracking_id": inst.tracking_id,
                "category": inst.category,
                "size": tuple(inst.size),
            }
        )
        for inst in scene.instances
    )
    return MappingProxyType(
        {
            "num_frames": scene.num_frames,
            "height": scene.height,
            "width": scene.width,
            "factors": tuple(scene.factors),
            "latent_dims": (t_c, h_c, w_c),
            "tokens_per_view": t_c * h_c * w_c,
            "view_ids": tuple(scene.view_ids),
            "instances": instances,
        }
    )
