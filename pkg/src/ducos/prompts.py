"""Prompt flows: per-stage guidance features plus a sharp relative depth map.

Real foundation-model inference happens out of process; its outputs reach
this package as DPF files. For self-contained experiments the synthetic
oracle derives an equivalent flow from a scene's RGB and ground truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imageops import gradient_magnitude, minmax_normalize
from .io import (
    CorruptFileError,
    IncompatibleFileError,
    pack_arrays,
    read_container,
    unpack_arrays,
    write_container,
)

PATCH_SIZE = 14
N_STAGES = 4
ORACLE_CHANNELS = 24
MIXING_SEED = 20250
DPF_MAGIC = b"DPF1"
LUMA = np.array([0.299, 0.587, 0.114])


def feature_hw(h: int, w: int, p: int = PATCH_SIZE) -> tuple[int, int]:
    return math.ceil(h / p), math.ceil(w / p)


@dataclass
class PromptFlow:
    """Four stage features ``[C_p, ceil(H/p), ceil(W/p)]`` and ``relative_depth`` ``[1, H, W]``.

    A leading batch axis is allowed on every array (see :meth:`stack`).
    """

    features: list[np.ndarray]
    relative_depth: np.ndarray
    source: str = "oracle"
    patch_size: int = PATCH_SIZE

    def __post_init__(self):
        if len(self.features) != N_STAGES:
            raise ValueError(f"expected {N_STAGES} feature stages, got {len(self.features)}")
        shapes = {f.shape[:-2] for f in self.features}
        if len(shapes) != 1:
            raise ValueError(f"feature stages disagree on channels: {shapes}")
        H, W = self.relative_depth.shape[-2:]
        want = feature_hw(H, W, self.patch_size)
        for f in self.features:
            if f.shape[-2:] != want:
                raise ValueError(f"feature dims {f.shape[-2:]} do not match {want} for {H}x{W}")

    @property
    def channels(self) -> int:
        return self.features[0].shape[-3]

    @property
    def hw(self) -> tuple[int, int]:
        return self.relative_depth.shape[-2:]

    @classmethod
    def stack(cls, flows: list["PromptFlow"]) -> "PromptFlow":
        return cls(
            [np.stack([f.features[s] for f in flows]) for s in range(N_STAGES)],
            np.stack([f.relative_depth for f in flows]),
            flows[0].source,
            flows[0].patch_size,
        )


# ---------------------------------------------------------------------- oracle
def distort_depth(depth: np.ndarray, a: float, gamma: float, b: float) -> np.ndarray:
    """Monotone power-law distortion N(a * depth**gamma + b); a > 0 keeps ordering."""
    if a <= 0:
        raise ValueError("a must be positive")
    return minmax_normalize(a * np.power(np.asarray(depth, dtype=np.float64), gamma) + b)


def patch_pool(x: np.ndarray, p: int = PATCH_SIZE) -> np.ndarray:
    """Mean over p x p patches after replicate-padding up to a multiple of p."""
    C, H, W = x.shape
    h, w = feature_hw(H, W, p)
    xp = np.pad(x, ((0, 0), (0, h * p - H), (0, w * p - W)), mode="edge")
    return xp.reshape(C, h, p, w, p).mean(axis=(2, 4))


def mixing_matrices(in_ch: int, out_ch: int = ORACLE_CHANNELS, seed: int = MIXING_SEED) -> list[np.ndarray]:
    """Fixed random per-stage channel mixers (the same for every scene)."""
    rng = np.random.default_rng(seed)
    return [rng.normal(0, 1 / math.sqrt(in_ch), (out_ch, in_ch)) for _ in range(N_STAGES)]


def synthetic_prompt_oracle(
    scene,
    seed: int,
    a: float | None = None,
    gamma: float | None = None,
    b: float | None = None,
    channels: int = ORACLE_CHANNELS,
    patch_size: int = PATCH_SIZE,
) -> PromptFlow:
    """Emulate a depth foundation model: sharp edges, wrong absolute values.

    Distortion parameters not given explicitly are drawn from ``seed``
    (a in [0.5, 2], gamma in [0.7, 1.3], b in [-1, 1]).
    """
    rng = np.random.default_rng(seed)
    draws = rng.uniform(0.5, 2.0), rng.uniform(0.7, 1.3), rng.uniform(-1.0, 1.0)
    a = draws[0] if a is None else a
    gamma = draws[1] if gamma is None else gamma
    b = draws[2] if b is None else b
    gt = np.asarray(scene.gt_depth, dtype=np.float64)
    rel = distort_depth(gt, a, gamma, b)
    rgb = np.asarray(scene.rgb, dtype=np.float64)
    luma = np.tensordot(LUMA, rgb, axes=1)[None]
    base = np.concatenate([rgb, gradient_magnitude(luma), rel], axis=0)
    pooled = patch_pool(base, patch_size)
    feats = [np.tensordot(m, pooled, axes=1).astype(np.float32) for m in mixing_matrices(base.shape[0], channels)]
    return PromptFlow(feats, rel.astype(np.float32), "oracle", patch_size)


# ------------------------------------------------------------------- DPF files
def write_prompt_file(path, flow: PromptFlow) -> None:
    H, W = flow.hw
    header = {
        "p": flow.patch_size,
        "C_p": flow.channels,
        "H": int(H),
        "W": int(W),
        "dtype": "float32",
        "stage_shapes": [list(f.shape) for f in flow.features],
    }
    write_container(path, DPF_MAGIC, header, pack_arrays(flow.features + [flow.relative_depth], "float32"))


def load_prompt_file(path, expect_hw: tuple[int, int] | None = None) -> PromptFlow:
    header, payload = read_container(path, DPF_MAGIC)
    H, W, p = header["H"], header["W"], header["p"]
    shapes = [list(s) for s in header["stage_shapes"]] + [[1, H, W]]
    if len(shapes) != N_STAGES + 1:
        raise CorruptFileError(f"{path}: expected {N_STAGES} stage shapes")
    want = list(feature_hw(H, W, p))
    for s in shapes[:-1]:
        if s[0] != header["C_p"] or s[1:] != want:
            raise CorruptFileError(f"{path}: stage shape {s} inconsistent with C_p={header['C_p']}, {H}x{W}, p={p}")
    if expect_hw is not None and tuple(expect_hw) != (H, W):
        raise IncompatibleFileError(f"{path}: prompts are {H}x{W}, requested {tuple(expect_hw)}")
    arrays = unpack_arrays(payload, shapes, "float32")
    rel = arrays[-1]
    if not np.all(np.isfinite(rel)):
        raise CorruptFileError(f"{path}: non-finite relative depth")
    if rel.min() != 0 or rel.max() != 1:
        rel = minmax_normalize(rel).astype(np.float32)
    return PromptFlow(arrays[:-1], rel, "file", p)


def export_prompts(raw_dir, out_dir) -> list[Path]:
    """Convert raw little-endian float32 arrays listed in ``manifest.json`` into DPF files.

    Manifest layout::

        {"patch_size": 14,
         "entries": [{"name": "s0", "height": H, "width": W,
                      "features": [{"file": "...", "shape": [C, h, w]}, x4],
                      "relative_depth": {"file": "...", "shape": [1, H, W]}}]}

    Files whose bytes would not change are left untouched.
    """
    raw_dir, out_dir = Path(raw_dir), Path(out_dir)
    manifest = json.loads((raw_dir / "manifest.json").read_text())
    p = manifest.get("patch_size", PATCH_SIZE)
    out_dir.mkdir(parents=True, exist_ok=True)
    flows = []
    # validate everything before writing anything
    for entry in manifest["entries"]:
        items = entry["features"] + [entry["relative_depth"]]
        arrays = []
        for item in items:
            body = (raw_dir / item["file"]).read_bytes()
            n = int(np.prod(item["shape"]))
            if len(body) != 4 * n:
                raise IncompatibleFileError(
                    f"{item['file']}: {len(body)} bytes but manifest shape {item['shape']} needs {4 * n}"
                )
            arrays.append(np.frombuffer(body, dtype="<f4").reshape(item["shape"]).astype(np.float32))
        if arrays[-1].shape != (1, entry["height"], entry["width"]):
            raise IncompatibleFileError(f"{entry['name']}: relative depth shape {arrays[-1].shape} disagrees with manifest size")
        rel = arrays[-1]
        if rel.min() != 0 or rel.max() != 1:
            rel = minmax_normalize(rel).astype(np.float32)
        try:
            flows.append((entry["name"], PromptFlow(arrays[:-1], rel, "file", p)))
        except ValueError as exc:
            raise IncompatibleFileError(f"{entry['name']}: {exc}") from None
    written = []
    for name, flow in flows:
        target = out_dir / f"{name}.dpf"
        tmp = out_dir / f".{name}.dpf.new"
        write_prompt_file(tmp, flow)
        if target.exists() and target.read_bytes() == tmp.read_bytes():
            tmp.unlink()
        else:
            tmp.replace(target)
        written.append(target)
    return written
