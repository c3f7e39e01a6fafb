"""The depth super-resolution network: head conv, four fusion stages, tail conv."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .autodiff import Conv2d, Module, Tensor, init_kaiming_uniform, no_grad, pad_replicate
from .fusion import FUSIONS, CFStage, FusionTrace
from .prompts import N_STAGES, PATCH_SIZE, PromptFlow

DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass
class ModelConfig:
    channels: int = 32
    prompt_channels: int = 24
    blocks: int = 2
    iterations: int = 3
    deconv_kernel: int = 4
    patch_size: int = PATCH_SIZE
    fusion: str = "pcc"
    h_shared: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        if self.channels < 1 or self.prompt_channels < 1 or self.blocks < 0:
            raise ValueError("channel and block counts must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {sorted(DTYPES)}")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


class DuCosModel(Module):
    def __init__(self, config: ModelConfig | None = None, seed: int | None = 0):
        self.config = config = config or ModelConfig()
        dt = DTYPES[config.dtype]
        C = config.channels
        self.head = Conv2d(1, C, 3, dtype=dt)
        self.stages = [
            CFStage(
                C,
                config.prompt_channels,
                config.iterations,
                config.blocks,
                config.deconv_kernel,
                config.patch_size,
                config.fusion,
                config.h_shared,
                dt,
            )
            for _ in range(N_STAGES)
        ]
        self.tail = Conv2d(C, 1, 3, dtype=dt)
        if seed is not None:
            init_params(self, seed)

    def named_parameters(self, prefix: str = ""):
        for name, p in super().named_parameters(prefix):
            # "stages.0." reads better as "stage1."
            if name.startswith(prefix + "stages."):
                rest = name[len(prefix) + len("stages.") :]
                idx, tail = rest.split(".", 1)
                name = f"{prefix}stage{int(idx) + 1}.{tail}"
            yield name, p

    @property
    def dtype(self):
        return DTYPES[self.config.dtype]

    def forward(self, x, prompts: PromptFlow, force_alpha: float | None = None) -> tuple[Tensor, list[FusionTrace]]:
        """x: [N, 1, H, W] (or [1, H, W]) bicubic-upsampled depth; prompts batched alike.

        Inputs are replicate-padded up to a multiple of the patch size and
        the prediction and traces are cropped back to H x W.
        """
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        unbatched = x.ndim == 3
        feats = [np.asarray(f, dtype=self.dtype) for f in prompts.features]
        if len(feats) != N_STAGES:
            raise ValueError(f"expected {N_STAGES} prompt stages, got {len(feats)}")
        if unbatched:
            x = x.reshape((1,) + x.shape)
            feats = [f[None] for f in feats]
        H, W = x.shape[-2:]
        if tuple(prompts.relative_depth.shape[-2:]) != (H, W):
            raise ValueError(f"relative depth is {prompts.relative_depth.shape[-2:]}, input is {(H, W)}")
        p = self.config.patch_size
        Hp, Wp = p * math.ceil(H / p), p * math.ceil(W / p)
        d = self.head(pad_replicate(x, (0, Hp - H, 0, Wp - W)))
        traces = []
        for stage, f in zip(self.stages, feats):
            if f.shape[-2:] != (Hp // p, Wp // p):
                raise ValueError(f"prompt dims {f.shape[-2:]} do not fit {H}x{W} with patch {p}")
            d, trace = stage(Tensor(f), d, force_alpha, valid_hw=(H, W))
            traces.append(trace)
        y = self.tail(d)[..., :H, :W]
        if unbatched:
            y = y.reshape(y.shape[1:])
        return y, traces

    def predict(self, x: np.ndarray, prompts: PromptFlow) -> np.ndarray:
        with no_grad():
            y, _ = self.forward(x, prompts)
        return y.data


def init_params(model: Module, seed: int) -> Module:
    return init_kaiming_uniform(model, seed)


def model_forward(model: DuCosModel, x, prompts: PromptFlow, force_alpha: float | None = None):
    return model(x, prompts, force_alpha)


def load_model(path) -> DuCosModel:
    """Rebuild a model from a checkpoint written by the trainer."""
    from .io import load_checkpoint

    named, config, _ = load_checkpoint(path)
    model = DuCosModel(ModelConfig.from_dict(config["model"]), seed=None)
    model.load_state_dict(named)
    return model
