import numpy as np
import pytest

from conftest import tiny_model
from ducos.autodiff import SGD, Parameter, backward
from ducos.losses import loss_cf, loss_gr, loss_rec
from ducos.prompts import PromptFlow
from ducos.trainer import (
    HISTORY_FIELDS,
    DualState,
    DuCosObjective,
    NumericAbort,
    QuadraticProbe,
    TrainConfig,
    ascend,
    read_history,
    step_dual,
    step_primal,
    step_schedule,
    train,
)


# ------------------------------------------------------------------------ dual
def test_training_defaults():
    cfg = TrainConfig()
    assert (cfg.lr, cfg.lam0, cfg.mu0, cfg.eta_lam0, cfg.eta_mu0) == (1e-5, 0.01, 0.05, 0.01, 0.01)
    assert cfg.optimizer == "sgd"
    d = DualState()
    assert (d.lam, d.mu, d.eta_lam, d.eta_mu) == (0.01, 0.05, 0.01, 0.01)


def test_ascent_arithmetic():
    d = ascend(DualState(lam=0.01, eta_lam=0.01), l_cf=0.5, l_gr=0.0)
    assert abs(d.lam - 0.015) < 1e-15


def test_step_dual_applies_schedule_then_ascent():
    # at t = T/2 the step length is eta0/2: eta0 = 0.02 gives 0.01
    d = DualState(lam=0.01, mu=0.05, eta_lam0=0.02, eta_mu0=0.02, T=10)
    d = step_dual(d, 0.5, 0.2, t=5)
    assert d.eta_lam == 0.01 and abs(d.lam - 0.015) < 1e-15 and abs(d.mu - 0.052) < 1e-15


def test_schedule_endpoints_and_linearity():
    d = DualState(eta_lam0=0.03, eta_mu0=0.07, T=8)
    assert step_schedule(d, 0).eta_lam == 0.03
    assert step_schedule(d, 4).eta_lam == 0.015
    assert step_schedule(d, 8).eta_lam == 0 and step_schedule(d, 8).eta_mu == 0
    e = [step_schedule(d, t).eta_mu for t in range(9)]
    for t1 in range(9):
        for t2 in range(9):
            assert abs((e[t1] - e[t2]) - 0.07 * (t2 - t1) / 8) < 1e-12


def test_multipliers_frozen_at_horizon():
    d = step_dual(DualState(T=3), 0.4, 0.4, 3)
    assert step_dual(d, 5.0, 5.0, 3).lam == d.lam


def test_negative_excursion_clamped_to_zero():
    d = ascend(DualState(lam=0.01, mu=0.05, eta_lam=1.0, eta_mu=1.0), -3.0, -0.2)
    assert d.lam == 0.0 and d.mu == 0.0


def test_compounding_schedule_variant():
    d = DualState(eta_lam0=0.01, eta_mu0=0.01, T=4)
    d1 = step_schedule(d, 1, compounding=True)
    d2 = step_schedule(d1, 2, compounding=True)
    assert abs(d2.eta_lam - 0.01 * 0.75 * 0.5) < 1e-15


def test_step_dual_rejects_out_of_range_epoch():
    with pytest.raises(ValueError):
        step_dual(DualState(T=5), 0, 0, 0)
    with pytest.raises(ValueError):
        step_dual(DualState(T=5), 0, 0, 6)


def test_lambda_strictly_grows_while_violated():
    d = DualState(T=100)
    for t in range(1, 100):
        nd = step_dual(d, 0.3, 0.1, t)
        assert nd.lam > d.lam and nd.mu > d.mu
        d = nd


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"epochs": 3, "momentum": 0.9})


# ---------------------------------------------------------------------- primal
def test_zero_multipliers_reduce_to_reconstruction_step(small_pair):
    model = tiny_model()
    before = {n: p.data.copy() for n, p in model.named_parameters()}
    # reference gradient of L_rec alone
    ref = tiny_model()
    y, _ = ref(small_pair.x[None], PromptFlow.stack([small_pair.prompts]))
    backward(loss_rec(y, small_pair.z[None]), ref.parameters())
    ref_grads = {n: p.grad for n, p in ref.named_parameters()}

    cfg = TrainConfig(lr=1e-3)
    step_primal(model, [small_pair], DualState(lam=0.0, mu=0.0), SGD(model.parameters(), cfg.lr), cfg)
    for n, p in model.named_parameters():
        np.testing.assert_allclose(p.data - before[n], -cfg.lr * ref_grads[n], rtol=0, atol=1e-12)


def test_loss_bundle_matches_standalone_losses(small_pair):
    model = tiny_model()
    prompts = PromptFlow.stack([small_pair.prompts])
    y, traces = model(small_pair.x[None], prompts)
    want = (float(loss_rec(y, small_pair.z[None]).data), float(loss_cf(traces).data), float(loss_gr(y, prompts.relative_depth).data))
    b = step_primal(model, [small_pair], DualState(), SGD(model.parameters(), 1e-5))
    assert (b.l_rec, b.l_cf, b.l_gr) == want
    assert abs(b.lagrangian - (want[0] + 0.01 * want[1] + 0.05 * want[2])) < 1e-6
    assert b.n_valid == int((small_pair.z > 0).sum())


def test_probe_primal_steps_nonincreasing():
    probe = QuadraticProbe()
    opt = SGD(probe.parameters(), 0.05)
    dual = DualState(lam=0.5, mu=0.0)
    values = [step_primal(probe, None, dual, opt).lagrangian for _ in range(11)]
    assert all(b <= a for a, b in zip(values, values[1:]))


def test_negative_multiplier_rejected():
    probe = QuadraticProbe()
    with pytest.raises(ValueError):
        step_primal(probe, None, DualState(lam=-1.0), SGD(probe.parameters(), 0.1))


class NaNObjective:
    def __init__(self):
        self.w = Parameter(np.ones(2))

    def parameters(self):
        return [self.w]

    def losses(self, batch):
        bad = self.w / 0.0 * 0.0
        return bad.sum(), self.w.sum(), self.w.sum(), 2


def test_non_finite_loss_aborts():
    with np.errstate(all="ignore"):
        with pytest.raises(NumericAbort, match="l_rec=nan"):
            train(NaNObjective(), [None], TrainConfig(epochs=2))


# ----------------------------------------------------------------------- train
def test_history_shape_and_nonnegative_multipliers(tmp_path):
    cfg = TrainConfig(epochs=40, lr=0.05, lam0=0.0, mu0=0.0, eta_lam0=0.5)
    res = train(QuadraticProbe(), [None], cfg, tmp_path)
    assert len(res.history) == 40
    assert all(r["lambda"] >= 0 and r["mu"] >= 0 for r in res.history)
    rows = read_history(tmp_path / "history.csv")
    assert rows == res.history
    assert (tmp_path / "history.csv").read_text().splitlines()[0] == ",".join(HISTORY_FIELDS)


def test_fixed_multipliers_zero_is_plain_reconstruction(small_pair):
    a, b = tiny_model("float32"), tiny_model("float32")
    cfg = TrainConfig(epochs=2, lr=1e-3, optimizer="adam", fixed_multipliers=True, lam0=0.0, mu0=0.0)
    ra = train(a, [small_pair], cfg)
    assert all(r["lambda"] == 0 and r["mu"] == 0 for r in ra.history)
    # identical to disabling both constraint terms outright
    rb = train(b, [small_pair], TrainConfig(epochs=2, lr=1e-3, optimizer="adam", disable_cf_loss=True, disable_gr_loss=True, fixed_multipliers=True))
    for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        np.testing.assert_array_equal(pa.data, pb.data)
    assert [r["l_rec"] for r in ra.history] == [r["l_rec"] for r in rb.history]


def test_training_reproducible_with_checkpoints(tmp_path, small_pair):
    cfg = TrainConfig(epochs=3, lr=1e-3, optimizer="adam", checkpoint_every=2, batch_size=1)
    r1 = train(tiny_model("float32"), [small_pair, small_pair], cfg, tmp_path / "a")
    r2 = train(tiny_model("float32"), [small_pair, small_pair], cfg, tmp_path / "b")
    assert r1.history == r2.history
    assert (tmp_path / "a" / "epoch_00002.ckpt").exists()
    assert (tmp_path / "a" / "final.ckpt").read_bytes() == (tmp_path / "b" / "final.ckpt").read_bytes()


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train(QuadraticProbe(), [], TrainConfig())


def test_probe_reaches_kkt_point():
    probe = QuadraticProbe()
    res = train(probe, [None], TrainConfig(epochs=2000, lr=0.1, optimizer="sgd", batch_size=1))
    lam = res.dual.lam
    assert np.linalg.norm(probe.lagrangian_grad(lam)) < 1e-4
    np.testing.assert_allclose(probe.w.data, probe.stationary_point(lam), atol=1e-3)


def test_probe_weak_duality():
    probe = QuadraticProbe()
    for lam in np.linspace(0, 50, 101):
        assert probe.dual_function(lam) <= probe.primal_optimum() + 1e-6


def test_objective_batches_pairs(small_pair):
    obj = DuCosObjective(tiny_model())
    l_rec, l_cf, l_gr, n = obj.losses([small_pair, small_pair])
    assert n == 2 * int((small_pair.z > 0).sum())
    assert all(np.isfinite(v.data) for v in (l_rec, l_cf, l_gr))
