import json

import numpy as np
import pytest

from ducos.data import Plane, Rect, gen_scene
from ducos.imageops import gradient_magnitude
from ducos.io import CorruptFileError, IncompatibleFileError, write_raw
from ducos.prompts import (
    PromptFlow,
    export_prompts,
    feature_hw,
    load_prompt_file,
    synthetic_prompt_oracle,
    write_prompt_file,
)


@pytest.fixture(scope="module")
def scene():
    return gen_scene(None, 70, 98, seed=5)


def test_feature_dims_from_patch_arithmetic(scene):
    flow = synthetic_prompt_oracle(scene, 0)
    assert feature_hw(70, 98) == (5, 7)
    assert all(f.shape == (24, 5, 7) for f in flow.features)
    assert flow.relative_depth.shape == (1, 70, 98)


def test_oracle_deterministic_and_in_range(scene):
    a, b = synthetic_prompt_oracle(scene, 3), synthetic_prompt_oracle(scene, 3)
    for x, y in zip(a.features + [a.relative_depth], b.features + [b.relative_depth]):
        assert x.tobytes() == y.tobytes()
    rel = a.relative_depth
    assert np.all(np.isfinite(rel)) and rel.min() >= 0 and rel.max() <= 1


def test_identity_distortion_keeps_edge_set(scene):
    flow = synthetic_prompt_oracle(scene, 0, a=1.0, gamma=1.0, b=0.0)
    gt = scene.gt_depth.astype(np.float64)
    rel = flow.relative_depth.astype(np.float64)
    norm_gt = (gt - gt.min()) / (gt.max() - gt.min())
    np.testing.assert_allclose(rel, norm_gt, atol=1e-6)
    edges_gt = gradient_magnitude(norm_gt) > 0.05
    edges_rel = gradient_magnitude(rel) > 0.05
    assert np.array_equal(edges_gt, edges_rel)


@pytest.mark.parametrize("seed", range(5))
def test_distortion_preserves_ordering(seed):
    scene = gen_scene(None, 42, 42, seed=seed)
    flow = synthetic_prompt_oracle(scene, seed)
    gt = scene.gt_depth.astype(np.float64).ravel()
    rel = flow.relative_depth.astype(np.float64).ravel()
    # ordering preserved: sorting by gt leaves rel nondecreasing, and strict gt gaps stay strict
    order = np.argsort(gt, kind="stable")
    assert np.all(np.diff(rel[order]) >= 0)
    np.testing.assert_array_equal(np.argsort(rel, kind="stable"), np.argsort(gt, kind="stable"))


def test_relative_depth_edges_sit_on_discontinuities():
    prims = [Plane(near=5.0, far=5.5), Rect(10, 8, 30, 30, 1.0), Rect(36, 34, 56, 58, 2.5)]
    scene = gen_scene(prims, 64, 64)
    flow = synthetic_prompt_oracle(scene, 9)
    gm = gradient_magnitude(flow.relative_depth.astype(np.float64))[0]
    top = gm >= np.quantile(gm, 0.95)
    disc = scene.discontinuity_mask[0]
    near = disc.copy()
    near[1:] |= disc[:-1]
    near[:-1] |= disc[1:]
    near[:, 1:] |= disc[:, :-1]
    near[:, :-1] |= disc[:, 1:]
    assert np.all(near[top])


# ------------------------------------------------------------------- DPF files
def test_dpf_round_trip_bit_exact(tmp_path, scene):
    flow = synthetic_prompt_oracle(scene, 1)
    write_prompt_file(tmp_path / "a.dpf", flow)
    back = load_prompt_file(tmp_path / "a.dpf", expect_hw=(70, 98))
    for x, y in zip(flow.features + [flow.relative_depth], back.features + [back.relative_depth]):
        assert x.dtype == y.dtype and x.tobytes() == y.tobytes()
    assert back.source == "file"


def test_dpf_truncated_payload_rejected(tmp_path, scene):
    write_prompt_file(tmp_path / "a.dpf", synthetic_prompt_oracle(scene, 1))
    blob = (tmp_path / "a.dpf").read_bytes()
    (tmp_path / "b.dpf").write_bytes(blob[:-10])
    with pytest.raises(CorruptFileError):
        load_prompt_file(tmp_path / "b.dpf")


def test_dpf_flipped_byte_and_bad_magic(tmp_path, scene):
    write_prompt_file(tmp_path / "a.dpf", synthetic_prompt_oracle(scene, 1))
    blob = bytearray((tmp_path / "a.dpf").read_bytes())
    blob[-5] ^= 0xFF
    (tmp_path / "b.dpf").write_bytes(bytes(blob))
    with pytest.raises(CorruptFileError):
        load_prompt_file(tmp_path / "b.dpf")
    (tmp_path / "c.dpf").write_bytes(b"XXXX" + bytes(blob[4:]))
    with pytest.raises(CorruptFileError):
        load_prompt_file(tmp_path / "c.dpf")


def test_dpf_size_mismatch_is_incompatible(tmp_path, scene):
    write_prompt_file(tmp_path / "a.dpf", synthetic_prompt_oracle(scene, 1))
    with pytest.raises(IncompatibleFileError):
        load_prompt_file(tmp_path / "a.dpf", expect_hw=(64, 64))


def test_flow_validation():
    with pytest.raises(ValueError):
        PromptFlow([np.zeros((2, 1, 1))] * 4, np.zeros((1, 20, 20)))


# -------------------------------------------------------------------- export
def _raw_tree(root, rng, H=30, W=44, C=6, names=("s0", "s1")):
    root.mkdir(parents=True, exist_ok=True)
    h, w = feature_hw(H, W)
    entries, raw = [], {}
    for name in names:
        feats = []
        for s in range(4):
            arr = rng.normal(size=(C, h, w)).astype(np.float32)
            f = f"{name}_f{s}.f32"
            write_raw(root / f, arr)
            feats.append({"file": f, "shape": [C, h, w]})
            raw[(name, s)] = arr
        rel = rng.uniform(2, 9, size=(1, H, W)).astype(np.float32)
        write_raw(root / f"{name}_rel.f32", rel)
        entries.append({"name": name, "height": H, "width": W, "features": feats, "relative_depth": {"file": f"{name}_rel.f32", "shape": [1, H, W]}})
    (root / "manifest.json").write_text(json.dumps({"patch_size": 14, "entries": entries}))
    return raw


def test_export_loads_with_raw_means(tmp_path):
    raw = _raw_tree(tmp_path / "raw", np.random.default_rng(0))
    written = export_prompts(tmp_path / "raw", tmp_path / "out")
    assert [p.name for p in written] == ["s0.dpf", "s1.dpf"]
    flow = load_prompt_file(tmp_path / "out" / "s1.dpf")
    for s in range(4):
        assert abs(flow.features[s].mean() - raw[("s1", s)].mean()) < 1e-6
    assert flow.relative_depth.min() == 0 and abs(flow.relative_depth.max() - 1) < 1e-6


def test_export_is_idempotent(tmp_path):
    _raw_tree(tmp_path / "raw", np.random.default_rng(0))
    export_prompts(tmp_path / "raw", tmp_path / "out")
    first = {p.name: (p.read_bytes(), p.stat().st_mtime_ns) for p in (tmp_path / "out").iterdir()}
    export_prompts(tmp_path / "raw", tmp_path / "out")
    second = {p.name: (p.read_bytes(), p.stat().st_mtime_ns) for p in (tmp_path / "out").iterdir()}
    assert first == second


def test_export_rejects_manifest_mismatch_without_writing(tmp_path):
    _raw_tree(tmp_path / "raw", np.random.default_rng(0))
    manifest = json.loads((tmp_path / "raw" / "manifest.json").read_text())
    manifest["entries"][1]["features"][2]["shape"] = [7, 3, 4]
    (tmp_path / "raw" / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(IncompatibleFileError):
        export_prompts(tmp_path / "raw", tmp_path / "out")
    assert not any((tmp_path / "out").glob("*.dpf"))
