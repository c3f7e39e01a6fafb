"""Synthetic RGB-D scenes and the LR degradation pipelines."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .imageops import add_gaussian_noise, bicubic_resize, gaussian_blur, output_size
from .io import pack_arrays, read_container, unpack_arrays, write_container
from .prompts import PromptFlow, load_prompt_file, synthetic_prompt_oracle

MIN_SIZE = 28
DEPTH_RANGE = (0.5, 10.0)
NOISE_BLUR_SIGMA = 3.6
NOISE_STD = 0.07
REGIMES = ("clean", "noisy")
SCENE_MAGIC = b"DSC1"


# ----------------------------------------------------------------- primitives
@dataclass
class Plane:
    """Ground plane whose depth runs linearly from ``far`` (top row) to ``near`` (bottom row)."""

    near: float = 4.0
    far: float = 8.0
    albedo: tuple[float, float, float] = (0.6, 0.6, 0.6)
    checker: int = 8

    def depth(self, H: int, W: int) -> np.ndarray:
        rows = np.linspace(self.far, self.near, H)[:, None]
        return np.broadcast_to(rows, (H, W)).copy()


@dataclass
class Rect:
    """Fronto-parallel rectangle covering rows [top, bottom) and cols [left, right)."""

    top: int
    left: int
    bottom: int
    right: int
    depth: float
    albedo: tuple[float, float, float] = (0.8, 0.3, 0.3)

    def render(self, H: int, W: int) -> np.ndarray:
        d = np.full((H, W), np.inf)
        d[max(self.top, 0) : self.bottom, max(self.left, 0) : self.right] = self.depth
        return d


@dataclass
class Sphere:
    """Sphere seen as a disc of ``radius`` pixels; ``depth`` is its nearest point."""

    cy: float
    cx: float
    radius: float
    depth: float
    albedo: tuple[float, float, float] = (0.3, 0.5, 0.8)

    def render(self, H: int, W: int) -> np.ndarray:
        yy, xx = np.mgrid[0:H, 0:W]
        rho2 = ((yy - self.cy) ** 2 + (xx - self.cx) ** 2) / self.radius**2
        bulge = 0.25 * self.depth
        d = np.full((H, W), np.inf)
        inside = rho2 <= 1
        d[inside] = self.depth + bulge * (1 - np.sqrt(1 - rho2[inside]))
        return d


def primitive_to_dict(p) -> dict:
    return {"kind": type(p).__name__, **asdict(p)}


def primitive_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    cls = {"Plane": Plane, "Rect": Rect, "Sphere": Sphere}[kind]
    if "albedo" in d:
        d["albedo"] = tuple(d["albedo"])
    return cls(**d)


@dataclass
class Scene:
    gt_depth: np.ndarray  # [1, H, W] meters, 0 = invalid
    rgb: np.ndarray  # [3, H, W] in [0, 1]
    discontinuity_mask: np.ndarray  # [1, H, W] bool
    seed: int | None = None
    primitives: list = field(default_factory=list)

    @property
    def hw(self) -> tuple[int, int]:
        return self.gt_depth.shape[-2:]

    @property
    def valid(self) -> np.ndarray:
        return self.gt_depth > 0


def random_primitives(H: int, W: int, rng: np.random.Generator, edge_rich: bool = False) -> list:
    lo, hi = DEPTH_RANGE
    near = rng.uniform(3.0, 5.0)
    plane = Plane(near=near, far=rng.uniform(near + 1, hi), albedo=tuple(rng.uniform(0.3, 0.9, 3)))
    prims = [plane]
    n = rng.integers(4, 7) if edge_rich else rng.integers(2, 7)
    for _ in range(n):
        depth = rng.uniform(lo, near - 0.2)
        albedo = tuple(rng.uniform(0.1, 1.0, 3))
        if rng.random() < 0.6:
            h = rng.integers(H // 6, H // 2)
            w = rng.integers(W // 6, W // 2)
            top = rng.integers(1, H - h - 1)
            left = rng.integers(1, W - w - 1)
            prims.append(Rect(int(top), int(left), int(top + h), int(left + w), float(depth), albedo))
        else:
            r = rng.uniform(min(H, W) / 10, min(H, W) / 4)
            cy = rng.uniform(r, H - r)
            cx = rng.uniform(r, W - r)
            prims.append(Sphere(float(cy), float(cx), float(r), float(depth), albedo))
    return prims


def render(prims: list, H: int, W: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Z-buffer the primitives; returns (depth, rgb, discontinuity mask)."""
    plane = prims[0] if prims and isinstance(prims[0], Plane) else Plane()
    objects = [p for p in prims if not isinstance(p, Plane)]
    depth = plane.depth(H, W)
    label = np.zeros((H, W), dtype=int)
    yy, xx = np.mgrid[0:H, 0:W]
    checker = ((yy // plane.checker + xx // plane.checker) % 2) * 0.2 + 0.8
    albedo = np.asarray(plane.albedo)[:, None, None] * checker
    for i, obj in enumerate(objects, start=1):
        d = obj.render(H, W)
        closer = d < depth
        depth = np.where(closer, d, depth)
        label[closer] = i
        albedo = np.where(closer, np.asarray(obj.albedo)[:, None, None], albedo)
    shade = 0.35 + 0.65 * (DEPTH_RANGE[0] / depth)
    rgb = np.clip(albedo * shade, 0, 1)
    # a pixel is on a discontinuity when a 4-neighbour shows a different
    # primitive lying behind it (the near side of the silhouette)
    mask = np.zeros((H, W), dtype=bool)
    for axis, step in ((0, 1), (0, -1), (1, 1), (1, -1)):
        nl = np.roll(label, step, axis=axis)
        nd = np.roll(depth, step, axis=axis)
        edge = (nl != label) & (nd > depth)
        if axis == 0:
            edge[0 if step == 1 else -1, :] = False
        else:
            edge[:, 0 if step == 1 else -1] = False
        mask |= edge
    return depth, rgb, mask


def gen_scene(primitives=None, H: int = 64, W: int = 64, seed: int = 0, edge_rich: bool = False, invalid_fraction: float = 0.0) -> Scene:
    """Build a scene from an explicit primitive list, or randomly from ``seed`` when ``primitives`` is None.

    An explicit empty list renders the ground plane alone.
    """
    if H < MIN_SIZE or W < MIN_SIZE:
        raise ValueError(f"scenes must be at least {MIN_SIZE}x{MIN_SIZE}, got {H}x{W}")
    rng = np.random.default_rng(seed)
    prims = random_primitives(H, W, rng, edge_rich) if primitives is None else list(primitives)
    depth, rgb, mask = render(prims, H, W)
    if invalid_fraction > 0:
        holes = rng.random((H, W)) < invalid_fraction
        depth = np.where(holes, 0.0, depth)
        mask &= ~holes
    return Scene(
        depth[None].astype(np.float32),
        rgb.astype(np.float32),
        mask[None],
        seed,
        prims,
    )


def save_scene(path, scene: Scene) -> None:
    H, W = scene.hw
    header = {
        "H": int(H),
        "W": int(W),
        "seed": scene.seed,
        "primitives": [primitive_to_dict(p) for p in scene.primitives],
        "arrays": ["gt_depth", "rgb", "discontinuity_mask"],
    }
    arrays = [scene.gt_depth, scene.rgb, scene.discontinuity_mask.astype(np.float32)]
    write_container(path, SCENE_MAGIC, header, pack_arrays(arrays, "float32"))


def load_scene(path) -> Scene:
    header, payload = read_container(path, SCENE_MAGIC)
    H, W = header["H"], header["W"]
    gt, rgb, mask = unpack_arrays(payload, [[1, H, W], [3, H, W], [1, H, W]], "float32")
    prims = [primitive_from_dict(p) for p in header["primitives"]]
    return Scene(gt, rgb, mask > 0.5, header["seed"], prims)


# ------------------------------------------------------------------ degrading
@dataclass
class SamplePair:
    x: np.ndarray  # [1, H, W] bicubic-upsampled LR depth
    z: np.ndarray  # [1, H, W] ground truth
    prompts: PromptFlow
    scale: float
    regime: str
    lr: np.ndarray | None = None

    @property
    def mask(self) -> np.ndarray:
        return self.z > 0


def lr_size(H: int, W: int, scale: float) -> tuple[int, int]:
    return output_size(H, W, 1.0 / scale)


def add_sensor_noise(lr: np.ndarray, seed: int, sigma: float = NOISE_BLUR_SIGMA, std: float = NOISE_STD) -> np.ndarray:
    """Blur then additive Gaussian noise, both in [0, 1]-normalized depth units."""
    lo, hi = float(lr.min()), float(lr.max())
    span = hi - lo if hi > lo else 1.0
    unit = (lr - lo) / span
    unit = add_gaussian_noise(gaussian_blur(unit, sigma), 0.0, std, seed)
    return unit * span + lo


def degrade(
    scene: Scene,
    scale: float,
    regime: str = "clean",
    seed: int = 0,
    prompts: PromptFlow | str | Path | None = None,
) -> SamplePair:
    """Make the network input for ``scene`` at ``scale``.

    ``prompts`` is a PromptFlow, a DPF path, or None for the synthetic oracle
    (seeded with ``seed``). ``seed`` also drives the noisy regime.
    """
    if scale <= 1:
        raise ValueError(f"scale must exceed 1, got {scale}")
    if regime not in REGIMES:
        raise ValueError(f"regime must be one of {REGIMES}, got {regime!r}")
    z = np.asarray(scene.gt_depth, dtype=np.float64)
    H, W = z.shape[-2:]
    h, w = lr_size(H, W, scale)
    if h < 2 or w < 2:
        raise ValueError(f"scale {scale} leaves a {h}x{w} LR map")
    lr = bicubic_resize(z, size=(h, w))
    if regime == "noisy":
        lr = add_sensor_noise(lr, seed)
    x = bicubic_resize(lr, size=(H, W))
    if prompts is None:
        prompts = synthetic_prompt_oracle(scene, seed)
    elif not isinstance(prompts, PromptFlow):
        prompts = load_prompt_file(prompts, expect_hw=(H, W))
    return SamplePair(x.astype(np.float32), scene.gt_depth.astype(np.float32), prompts, scale, regime, lr)


def make_dataset(n: int, H: int, W: int, seed: int, edge_rich: bool = False) -> list[Scene]:
    """``n`` random scenes with per-scene seeds derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(n)
    return [gen_scene(None, H, W, int(s), edge_rich) for s in seeds]
