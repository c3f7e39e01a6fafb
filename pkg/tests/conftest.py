import numpy as np
import pytest

from ducos.data import degrade, gen_scene
from ducos.network import DuCosModel, ModelConfig

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def record(n: int, title: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE[n] = (title, bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}" + (f" ({detail})" if detail else ""))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_pair():
    scene = gen_scene(None, 56, 56, seed=3)
    return degrade(scene, 4, "clean", seed=3)


def tiny_model(dtype="float64", seed=0, **kw):
    cfg = dict(channels=4, prompt_channels=24, blocks=1, iterations=2, dtype=dtype)
    cfg.update(kw)
    return DuCosModel(ModelConfig(**cfg), seed=seed)
