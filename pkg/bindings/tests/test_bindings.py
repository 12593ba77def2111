"""Contract tests for the bound bundle producers.

Everything here goes through the installed packages only: bundles are
built via the public bindings calls, and the reference values come from
running the CLI as a subprocess and parsing what it wrote.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

bindings = pytest.importorskip("instamask_bindings")

import instamask
from instamask_bindings import (
    BoundMaskBundle,
    bound_build_masks,
    bound_load_exports,
    bound_load_scene,
)

FIXTURE_DIR = Path(__file__).parent / "fixtures"
SEED7 = FIXTURE_DIR / "scene_seed7.json"
ZERO = FIXTURE_DIR / "scene_zero.json"
TWOVIEW = FIXTURE_DIR / "scene_twoview.json"
SMALL = FIXTURE_DIR / "scene_small.json"

NEG = float(np.finfo(np.float64).min)


def _assert_bundles_equal(a: BoundMaskBundle, b: BoundMaskBundle) -> None:
    assert a.dense.dtype == b.dense.dtype == np.float64
    assert a.dense.shape == b.dense.shape
    assert a.dense.tobytes() == b.dense.tobytes()
    assert a.loss_mask.dtype == b.loss_mask.dtype == np.float64
    assert a.loss_mask.tobytes() == b.loss_mask.tobytes()
    assert dict(a.forward) == dict(b.forward)
    assert dict(a.dims) == dict(b.dims)


class TestBoundBuildMasks:
    def test_seed7_bundle_equals_cli_export_reload(self, tmp_path, cli):
        out = tmp_path / "out"
        res = cli("build-masks", str(SEED7), "--out", str(out))
        assert res.returncode == 0, res.stderr

        built = bound_build_masks(SEED7)
        loaded = bound_load_exports(out)
        _assert_bundles_equal(built, loaded)

        # non-vacuous fixture: condition rows, masked entries, foreground
        assert built.n == 3
        assert (built.dense == NEG).any()
        assert built.loss_mask.sum() > 0

    def test_zero_instance_scene_has_no_condition_rows(self):
        bundle = bound_build_masks(ZERO)
        assert bundle.n == 0
        assert bundle.dims["n"] == 0
        assert bundle.dims["instance_order"] == ()
        assert bundle.dense.shape == (bundle.m, bundle.m)
        assert not any(bundle.forward.values())
        assert bundle.loss_mask.sum() == 0.0
        # all-background scene: the default policy leaves every pair open
        assert (bundle.dense == 0.0).all()

    def test_options_mapping_matches_options_object(self):
        options = {"theta": 0.25, "policy": "strict", "condition_mode": "all-open"}
        from_mapping = bound_build_masks(SMALL, options)
        from_object = bound_build_masks(SMALL, instamask.BuildOptions(**options))
        _assert_bundles_equal(from_mapping, from_object)

    def test_every_option_name_matches_its_cli_flag(self, tmp_path, cli):
        options = {
            "theta": 0.75,
            "policy": "strict",
            "condition_mode": "all-open",
            "view_id": 1,
            "concat_all_views": False,
            "write_pgm": False,
        }
        out = tmp_path / "out"
        res = cli(
            "build-masks",
            str(TWOVIEW),
            "--out",
            str(out),
            "--theta",
            "0.75",
            "--policy",
            "strict",
            "--condition-mode",
            "all-open",
            "--view",
            "1",
            "--no-pgm",
        )
        assert res.returncode == 0, res.stderr
        _assert_bundles_equal(bound_build_masks(TWOVIEW, options), bound_load_exports(out))

    def test_concat_views_doubles_the_token_axis(self):
        single = bound_build_masks(TWOVIEW)
        both = bound_build_masks(TWOVIEW, {"concat_all_views": True})
        assert both.m == 2 * single.m
        assert both.n == single.n

    def test_unknown_option_key_is_rejected(self):
        with pytest.raises(TypeError, match="thetas"):
            bound_build_masks(SMALL, {"thetas": 0.5})

    def test_theta_out_of_range_raises_the_build_error(self):
        with pytest.raises(instamask.ValidationError, match=r"theta must be in \[0, 1\), got 1\.5"):
            bound_build_masks(SMALL, {"theta": 1.5})

    def test_unknown_policy_raises_the_build_error(self):
        with pytest.raises(instamask.ValidationError, match="unknown policy"):
            bound_build_masks(SMALL, {"policy": "bogus"})


class TestErrorPropagation:
    """The CLI prints ``error: <message>`` and exits 2; the bound calls
    must raise exceptions carrying exactly that message."""

    @staticmethod
    def _cli_error_line(res) -> str:
        assert res.returncode == 2, (res.returncode, res.stderr)
        lines = [l for l in res.stderr.splitlines() if l.startswith("error: ")]
        assert lines, res.stderr
        return lines[-1]

    def test_missing_scene_matches_cli_error_text(self, tmp_path, cli):
        missing = tmp_path / "nope.json"
        line = self._cli_error_line(cli("build-masks", str(missing), "--out", str(tmp_path / "o")))
        with pytest.raises(OSError) as err:
            bound_build_masks(missing)
        assert f"error: {err.value}" == line

    def test_malformed_scene_matches_cli_error_text(self, tmp_path, cli):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json", encoding="utf-8")
        line = self._cli_error_line(cli("build-masks", str(bad), "--out", str(tmp_path / "o")))
        with pytest.raises(instamask.ValidationError) as err:
            bound_build_masks(bad)
        assert f"error: {err.value}" == line

    def test_bad_view_matches_cli_error_text(self, tmp_path, cli):
        line = self._cli_error_line(
            cli("build-masks", str(SEED7), "--out", str(tmp_path / "o"), "--view", "7")
        )
        with pytest.raises(instamask.ValidationError) as err:
            bound_build_masks(SEED7, {"view_id": 7})
        assert f"error: {err.value}" == line

    def test_load_scene_errors_propagate(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            bound_load_scene(tmp_path / "absent.json")


class TestBoundLoadScene:
    def test_summary_fields(self):
        info = bound_load_scene(SEED7)
        assert info["num_frames"] == 8
        assert (info["height"], info["width"]) == (64, 64)
        assert info["factors"] == (2, 8, 8)
        assert info["latent_dims"] == (4, 8, 8)
        assert info["tokens_per_view"] == 256
        assert info["view_ids"] == (0,)
        assert len(info["instances"]) == 3

    def test_instance_ids_match_the_condition_axis(self):
        info = bound_load_scene(SEED7)
        ids = sorted(inst["tracking_id"] for inst in info["instances"])
        bundle = bound_build_masks(SEED7)
        assert tuple(ids) == bundle.dims["instance_order"]

    def test_summary_is_read_only(self):
        info = bound_load_scene(SEED7)
        with pytest.raises(TypeError):
            info["height"] = 1
        with pytest.raises(TypeError):
            info["instances"][0]["category"] = "x"


class TestBoundLoadExports:
    @pytest.fixture()
    def export_dir(self, tmp_path, cli):
        out = tmp_path / "out"
        res = cli("build-masks", str(SMALL), "--out", str(out), "--no-pgm")
        assert res.returncode == 0, res.stderr
        return out

    def test_missing_directory_raises(self, tmp_path):
        with pytest.raises(OSError):
            bound_load_exports(tmp_path / "absent")

    def test_truncated_dense_file_is_rejected(self, export_dir):
        path = export_dir / "attention_mask_dense.bin"
        path.write_bytes(path.read_bytes()[:8])
        with pytest.raises(ValueError, match="too short"):
            bound_load_exports(export_dir)

    def test_bad_dense_magic_is_rejected(self, export_dir):
        path = export_dir / "attention_mask_dense.bin"
        blob = bytearray(path.read_bytes())
        blob[:4] = b"XXXX"
        path.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="magic"):
            bound_load_exports(export_dir)

    def test_manifest_dense_disagreement_is_rejected(self, export_dir):
        path = export_dir / "manifest.json"
        doc = json.loads(path.read_text(encoding="utf-8"))
        doc["m"] += 1
        path.write_text(json.dumps(doc), encoding="utf-8")
        with pytest.raises(ValueError, match="manifest says"):
            bound_load_exports(export_dir)

    def test_wrong_format_tag_is_rejected(self, export_dir):
        path = export_dir / "loss_mask.json"
        doc = json.loads(path.read_text(encoding="utf-8"))
        doc["format"] = "something-else"
        path.write_text(json.dumps(doc), encoding="utf-8")
        with pytest.raises(ValueError, match="loss_mask.json is not a"):
            bound_load_exports(export_dir)


class TestBundleImmutability:
    def test_arrays_are_frozen(self):
        bundle = bound_build_masks(SMALL)
        with pytest.raises(ValueError):
            bundle.dense[0, 0] = 1.0
        with pytest.raises(ValueError):
            bundle.loss_mask[0] = 1.0

    def test_mappings_are_read_only(self):
        bundle = bound_build_masks(SMALL)
        with pytest.raises(TypeError):
            bundle.forward[0] = (1,)
        with pytest.raises(TypeError):
            bundle.dims["m"] = 0

    def test_construction_rejects_non_additive_entries(self):
        dims = {"m": 1, "n": 1, "tokens": 2, "instance_order": (9,)}
        with pytest.raises(ValueError, match="dense entries"):
            BoundMaskBundle(
                dense=np.ones((2, 2)),
                loss_mask=np.ones(1),
                forward={0: (9,)},
                dims=dims,
            )

    def test_construction_rejects_inconsistent_foreground(self):
        dense = np.where(np.eye(2, dtype=bool), 0.0, NEG)
        dims = {"m": 1, "n": 1, "tokens": 2, "instance_order": (9,)}
        with pytest.raises(ValueError, match="foreground disagrees"):
            BoundMaskBundle(
                dense=dense, loss_mask=np.ones(1), forward={0: ()}, dims=dims
            )


class TestPackageSurface:
    def test_exposes_the_bundle_type_and_three_calls(self):
        assert sorted(bindings.__all__) == [
            "BoundMaskBundle",
            "bound_build_masks",
            "bound_load_exports",
            "bound_load_scene",
        ]
        assert isinstance(BoundMaskBundle, type)
        assert all(
            callable(getattr(bindings, name)) for name in bindings.__all__
        )

    def test_version_tracks_instamask(self):
        assert bindings.__version__ == instamask.__version__
