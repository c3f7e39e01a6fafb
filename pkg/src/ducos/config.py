"""JSON run configuration for the command line: strict keys, stable defaults."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import REGIMES
from .network import ModelConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _strict(cls, d, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class DataConfig:
    """Where training pairs come from.

    ``scenes`` is a directory written by ``ducos gen``; when null, ``n``
    random scenes of ``size`` are generated from ``seed``. ``prompts`` is an
    optional directory of ``<scene>.dpf`` files; missing ones fall back to
    the synthetic oracle.
    """

    scenes: str | None = None
    prompts: str | None = None
    n: int = 4
    size: list = field(default_factory=lambda: [64, 64])
    seed: int = 0
    edge_rich: bool = False
    scale: float = 4.0
    regime: str = "clean"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if len(self.size) != 2:
            raise ValueError("size must be [H, W]")
        self.size = [int(v) for v in self.size]
        self.scale = float(self.scale)
        if self.scale <= 1:
            raise ValueError("scale must exceed 1")
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")


@dataclass
class RunConfig:
    out: str = "run"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {"out", "model", "train", "data"}
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}")
        out = d.get("out", "run")
        if not isinstance(out, str) or not out:
            raise ConfigError("out must be a non-empty string")
        return cls(
            out,
            _strict(ModelConfig, d.get("model", {}), "model"),
            _strict(TrainConfig, d.get("train", {}), "train"),
            _strict(DataConfig, d.get("data", {}), "data"),
        )

    def to_dict(self) -> dict:
        return {"out": self.out, "model": asdict(self.model), "train": asdict(self.train), "data": asdict(self.data)}


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return RunConfig.from_dict(raw)


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
