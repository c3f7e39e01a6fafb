"""Dual problem solving: primal descent on the weights, projected dual ascent on the multipliers.

Each epoch takes gradient steps on L = L_rec + lambda * L_cf + mu * L_gr with
the multipliers fixed, then decays the multiplier step lengths, ascends the
multipliers along the epoch-mean constraint losses and clamps them at zero.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import SGD, Adam, Parameter, Tensor, backward, sum_
from .losses import LossBundle, lagrangian_total, loss_cf, loss_gr, loss_rec
from .network import DuCosModel

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "l_rec", "l_cf", "l_gr", "lambda", "mu", "eta_lambda", "eta_mu")


class NumericAbort(FloatingPointError):
    """A non-finite loss appeared during training."""


# ------------------------------------------------------------------ dual state
@dataclass
class DualState:
    lam: float = 0.01
    mu: float = 0.05
    eta_lam: float = 0.01
    eta_mu: float = 0.01
    eta_lam0: float = 0.01
    eta_mu0: float = 0.01
    t: int = 0
    T: int = 1

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("horizon T must be >= 1")


def step_schedule(dual: DualState, t: int, compounding: bool = False) -> DualState:
    """Step lengths at epoch ``t``: eta0 * (1 - t/T).

    ``compounding=True`` instead multiplies the running value by (1 - t/T),
    the literal in-place reading of the update.
    """
    factor = 1.0 - t / dual.T
    if compounding:
        return replace(dual, eta_lam=dual.eta_lam * factor, eta_mu=dual.eta_mu * factor, t=t)
    return replace(dual, eta_lam=dual.eta_lam0 * factor, eta_mu=dual.eta_mu0 * factor, t=t)


def ascend(dual: DualState, l_cf: float, l_gr: float) -> DualState:
    """lambda += eta_lambda * L_cf, mu += eta_mu * L_gr, then clamp both at 0."""
    lam = max(dual.lam + dual.eta_lam * l_cf, 0.0)
    mu = max(dual.mu + dual.eta_mu * l_gr, 0.0)
    return replace(dual, lam=lam, mu=mu)


def step_dual(dual: DualState, l_cf: float, l_gr: float, t: int, compounding: bool = False) -> DualState:
    if not 1 <= t <= dual.T:
        raise ValueError(f"epoch {t} outside [1, {dual.T}]")
    return ascend(step_schedule(dual, t, compounding), l_cf, l_gr)


# ---------------------------------------------------------------------- config
@dataclass
class TrainConfig:
    lr: float = 1e-5
    epochs: int = 10
    batch_size: int = 4
    seed: int = 0
    optimizer: str = "sgd"
    lam0: float = 0.01
    mu0: float = 0.05
    eta_lam0: float = 0.01
    eta_mu0: float = 0.01
    schedule: str = "linear"
    disable_cf_loss: bool = False
    disable_gr_loss: bool = False
    fixed_multipliers: bool = False
    grad_op: str = "central"
    shuffle: bool = False
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs (T) must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.schedule not in ("linear", "compounding"):
            raise ValueError(f"schedule must be 'linear' or 'compounding', got {self.schedule!r}")
        if min(self.lam0, self.mu0, self.eta_lam0, self.eta_mu0) < 0:
            raise ValueError("multipliers and step lengths must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def initial_dual(self) -> DualState:
        return DualState(self.lam0, self.mu0, self.eta_lam0, self.eta_mu0, self.eta_lam0, self.eta_mu0, 0, self.epochs)


# ------------------------------------------------------------------ objectives
class DuCosObjective:
    """Wraps the network so a batch of SamplePairs yields (L_rec, L_cf, L_gr)."""

    def __init__(self, model: DuCosModel, grad_op: str = "central"):
        self.model = model
        self.grad_op = grad_op

    def parameters(self) -> list[Parameter]:
        return self.model.parameters()

    def losses(self, batch) -> tuple[Tensor, Tensor, Tensor, int]:
        from .prompts import PromptFlow

        dt = self.model.dtype
        x = np.stack([p.x for p in batch]).astype(dt)
        z = np.stack([p.z for p in batch]).astype(dt)
        prompts = PromptFlow.stack([p.prompts for p in batch])
        y, traces = self.model(x, prompts)
        mask = z > 0
        return (
            loss_rec(y, z, mask),
            loss_cf(traces),
            loss_gr(y, prompts.relative_depth.astype(dt), self.grad_op),
            int(mask.sum()),
        )


class QuadraticProbe:
    """Convex test problem: L_rec = |w - a|^2, L_cf = |w - b|^2, L_gr = 0."""

    def __init__(self, a=(2.0, 0.0), b=(0.0, 0.0), w0=None):
        self.a = np.asarray(a, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.w = Parameter(np.zeros_like(self.a) if w0 is None else np.asarray(w0, dtype=np.float64))

    def parameters(self) -> list[Parameter]:
        return [self.w]

    def losses(self, batch=None):
        da = self.w - Tensor(self.a)
        db = self.w - Tensor(self.b)
        return sum_(da * da), sum_(db * db), Tensor(np.float64(0.0)), self.a.size

    def stationary_point(self, lam: float) -> np.ndarray:
        return (self.a + lam * self.b) / (1 + lam)

    def lagrangian_grad(self, lam: float) -> np.ndarray:
        w = self.w.data
        return 2 * (w - self.a) + 2 * lam * (w - self.b)

    def dual_function(self, lam: float) -> float:
        """min_w |w - a|^2 + lam |w - b|^2 in closed form."""
        return lam / (1 + lam) * float(np.sum((self.a - self.b) ** 2))

    def primal_optimum(self) -> float:
        return float(np.sum((self.a - self.b) ** 2))


def _as_objective(model_or_objective, config: TrainConfig):
    if isinstance(model_or_objective, DuCosModel):
        return DuCosObjective(model_or_objective, config.grad_op)
    return model_or_objective


def make_optimizer(params, config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(params, config.lr)
    return SGD(params, config.lr)


# ----------------------------------------------------------------------- steps
def step_primal(objective, batch, dual: DualState, optimizer, config: TrainConfig | None = None) -> LossBundle:
    """One weight update on the Lagrangian with the multipliers held fixed.

    Returns the loss values measured before the update.
    """
    config = config or TrainConfig()
    objective = _as_objective(objective, config)
    if dual.lam < 0 or dual.mu < 0:
        raise ValueError("multipliers must be non-negative")
    params = objective.parameters()
    for p in params:
        p.grad = None
    l_rec, l_cf, l_gr, n_valid = objective.losses(batch)
    lam = 0.0 if config.disable_cf_loss else dual.lam
    mu = 0.0 if config.disable_gr_loss else dual.mu
    total = lagrangian_total(l_rec, l_cf, l_gr, lam, mu)
    values = [float(v.data) for v in (l_rec, l_cf, l_gr, total)]
    if not all(math.isfinite(v) for v in values):
        raise NumericAbort(
            f"non-finite loss: l_rec={values[0]}, l_cf={values[1]}, l_gr={values[2]}, lambda={dual.lam}, mu={dual.mu}"
        )
    backward(total, params)
    optimizer.step()
    return LossBundle(values[0], values[1], values[2], values[3], n_valid)


def batches(dataset: Sequence, batch_size: int, rng: np.random.Generator | None = None) -> list[list]:
    order = np.arange(len(dataset))
    if rng is not None:
        rng.shuffle(order)
    return [[dataset[i] for i in order[k : k + batch_size]] for k in range(0, len(order), batch_size)]


@dataclass
class TrainResult:
    objective: object
    history: list[dict] = field(default_factory=list)
    dual: DualState | None = None

    @property
    def model(self):
        return getattr(self.objective, "model", self.objective)


def train(
    model,
    dataset: Sequence,
    config: TrainConfig,
    out_dir=None,
    run_config: dict | None = None,
) -> TrainResult:
    """Run T epochs of alternating primal/dual updates.

    ``model`` is a DuCosModel (dataset of SamplePairs) or any objective
    exposing ``parameters()`` and ``losses(batch)``. With ``out_dir`` the
    history CSV and checkpoints are written there.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    objective = _as_objective(model, config)
    optimizer = make_optimizer(objective.parameters(), config)
    dual = config.initial_dual()
    rng = np.random.default_rng(config.seed) if config.shuffle else None
    history: list[dict] = []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    for t in range(1, config.epochs + 1):
        bundles = [step_primal(objective, b, dual, optimizer, config) for b in batches(dataset, config.batch_size, rng)]
        n = len(bundles)
        l_rec = math.fsum(b.l_rec for b in bundles) / n
        l_cf = math.fsum(b.l_cf for b in bundles) / n
        l_gr = math.fsum(b.l_gr for b in bundles) / n
        if not config.fixed_multipliers:
            dual = step_dual(
                dual,
                0.0 if config.disable_cf_loss else l_cf,
                0.0 if config.disable_gr_loss else l_gr,
                t,
                config.schedule == "compounding",
            )
        row = dict(zip(HISTORY_FIELDS, (t, l_rec, l_cf, l_gr, dual.lam, dual.mu, dual.eta_lam, dual.eta_mu)))
        history.append(row)
        log.info("epoch %d/%d l_rec=%.5f l_cf=%.5f l_gr=%.5f lambda=%.5f mu=%.5f", t, config.epochs, l_rec, l_cf, l_gr, dual.lam, dual.mu)
        if out_dir is not None and config.checkpoint_every and t % config.checkpoint_every == 0:
            _save(objective, out_dir / f"epoch_{t:05d}.ckpt", config, dual, t, run_config)
    if out_dir is not None:
        write_history(history, out_dir / "history.csv")
        _save(objective, out_dir / "final.ckpt", config, dual, config.epochs, run_config)
    return TrainResult(objective, history, dual)


def _save(objective, path: Path, config: TrainConfig, dual: DualState, epoch: int, run_config: dict | None) -> None:
    from .io import save_checkpoint

    model = getattr(objective, "model", None)
    if model is None:
        return
    cfg = run_config if run_config is not None else {"model": model.config.to_dict(), "train": config.to_dict()}
    save_checkpoint(path, model.state_dict(), cfg, {"dual": asdict(dual), "epoch": epoch})


def write_history(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]
