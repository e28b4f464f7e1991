import numpy as np
import pytest

from anneal_cnn import trainers
from anneal_cnn.annealers import AnnealSchedule, brute_force_qubo
from anneal_cnn.errors import DomainError
from anneal_cnn.losses import loss_grad, loss_value
from anneal_cnn.nn import Network, sgd_step
from anneal_cnn.qubo import decode_solution, encode_mse_qubo
from anneal_cnn.trainers import (HyperParams, QATrainer, Regime, evaluate, train, train_bp,
                                 train_qa, train_sa)

from conftest import synthetic_dataset


def params_of(net):
    return {k: v.copy() for k, v in net.named_params()}


def assert_same_params(a, b):
    for (ka, va), (kb, vb) in zip(a.named_params(), b.named_params()):
        assert ka == kb
        assert va.tobytes() == vb.tobytes(), ka


@pytest.mark.parametrize("regime", ["bp", "sa", "qa"])
def test_zero_learning_rate_leaves_parameters(regime):
    data = synthetic_dataset(12)
    net = Network.create(seed=0)
    before = params_of(net)
    train(regime, net, data, HyperParams(learning_rate=0.0, seed=1))
    for k, v in net.named_params():
        np.testing.assert_array_equal(v, before[k])


def _full_batch_run(data, steps, lr=0.1):
    net = Network.create(seed=0)
    losses = []
    for _ in range(steps):
        out = net.forward(data.images)
        losses.append(loss_value("mse", out, data.one_hot).value)
        sgd_step(net, net.backward(loss_grad("mse", out, data.one_hot)), lr)
    return net, losses


def test_single_batch_loss_decreases_over_first_ten_steps():
    _, losses = _full_batch_run(synthetic_dataset(8), 11)
    assert all(b < a for a, b in zip(losses, losses[1:]))


@pytest.mark.xfail(strict=True, reason="full-batch sigmoid net plateaus near the class prior "
                                       "(loss ~0.8) within 200 steps at lr 0.1")
def test_single_batch_memorization_200_full_batch_steps():
    _, losses = _full_batch_run(synthetic_dataset(8), 200)
    assert losses[-1] < 0.05


def test_memorization_200_passes_of_single_sample_steps():
    data = synthetic_dataset(8)
    net, report = train_bp(Network.create(seed=0), data,
                           HyperParams(learning_rate=0.1, batch_size=1, epochs=200, loss="mse",
                                       warmup=False))
    assert report.epoch_loss[-1] < report.epoch_loss[0]
    assert loss_value("mse", net.forward(data.images), data.one_hot).value < 0.05
    assert evaluate(net, data) == 100.0


@pytest.mark.parametrize("regime", ["bp", "sa", "qa"])
def test_runs_are_deterministic(regime, tiny_data):
    tr, te = tiny_data
    reports = []
    for _ in range(2):
        _, rep = train(regime, Network.create(seed=3), tr, HyperParams(seed=5, epochs=2),
                       validation=te, test=te)
        reports.append(rep)
    assert reports[0].epoch_val_accuracy == reports[1].epoch_val_accuracy
    assert reports[0].epoch_test_accuracy == reports[1].epoch_test_accuracy
    assert reports[0].epoch_loss == reports[1].epoch_loss
    for acc in reports[0].epoch_test_accuracy + reports[0].epoch_val_accuracy:
        assert 0.0 <= acc <= 100.0
    assert reports[0].wall_ms >= 0 and reports[0].regime is Regime(regime)


def test_sa_with_zero_sigma_matches_bp(tiny_data):
    tr, _ = tiny_data
    bp, _ = train_bp(Network.create(seed=1), tr, HyperParams(seed=2))
    sa, _ = train_sa(Network.create(seed=1), tr, HyperParams(seed=2, perturb_scale=0.0))
    assert_same_params(bp, sa)


def test_sa_with_degenerate_schedule_matches_bp(tiny_data):
    tr, _ = tiny_data
    hp = HyperParams(seed=2, sa_schedule=AnnealSchedule(0.001, 1.0, 0.5, 5))
    bp, _ = train_bp(Network.create(seed=1), tr, HyperParams(seed=2))
    sa, _ = train_sa(Network.create(seed=1), tr, hp)
    assert_same_params(bp, sa)


def test_sa_phase_touches_dense_weights_only_and_never_raises_loss():
    data = synthetic_dataset(8)
    hp = HyperParams(learning_rate=0.5, batch_size=8, seed=0, warmup=False)
    trainer = trainers.SATrainer(Network.create(seed=0), hp)
    trainer._descend = lambda out, y, mask=None: None  # isolate the annealing phase
    x, y = data.images, data.one_hot
    before = params_of(trainer.net)
    loss_before = loss_value(hp.loss, trainer.net.forward(x), y).value
    trainer.step(x, y)
    loss_after = loss_value(hp.loss, trainer.net.forward(x), y).value
    assert loss_after <= loss_before
    for k, v in trainer.net.named_params():
        if k == "dense.weights":
            assert not np.array_equal(v, before[k])
        else:
            np.testing.assert_array_equal(v, before[k])


def test_qa_zero_residuals_fall_back_to_bp(tiny_data, monkeypatch):
    tr, _ = tiny_data
    monkeypatch.setattr(trainers, "residuals", lambda out, y: np.zeros(out.shape[0]))
    bp, _ = train_bp(Network.create(seed=1), tr, HyperParams(seed=2))
    qa, rep = train_qa(Network.create(seed=1), tr, HyperParams(seed=2))
    assert_same_params(bp, qa)
    assert set(rep.selected_fraction) == {0.0}


def test_qa_selection_matches_brute_force():
    r = np.array([1.0, -1.0, 0.5])
    for sampler in ("anneal", "qa"):
        trainer = QATrainer(Network.create(seed=0), HyperParams(loss="mse", qa_sampler=sampler))
        selected, e, Q = trainer.select(r)
        x, e_min = brute_force_qubo(encode_mse_qubo(r, 3))
        assert selected == decode_solution(x)
        assert e == pytest.approx(e_min, abs=1e-12)


def test_qa_debug_oracle_checks(tiny_data):
    tr, _ = tiny_data
    _, rep = train_qa(Network.create(seed=0), tr, HyperParams(seed=0, debug=True, loss="mse"))
    assert rep.oracle_checks > 0
    assert rep.oracle_violations == 0
    assert rep.oracle_hits / rep.oracle_checks >= 0.99
    assert len(rep.batch_min_cost) == rep.oracle_checks


def test_evaluate_tie_break_lowest_index():
    data = synthetic_dataset(50, seed=4)
    net = Network.create(seed=0, zero=True)
    assert evaluate(net, data) == pytest.approx(100.0 * np.mean(data.labels == 0))


def test_evaluate_bounds_and_empty():
    data = synthetic_dataset(30)
    acc = evaluate(Network.create(seed=9), data)
    assert 0.0 <= acc <= 100.0
    with pytest.raises(DomainError):
        evaluate(Network.create(), data.subset([]))


def test_hyperparams_validation():
    with pytest.raises(DomainError):
        HyperParams(learning_rate=-1)
    with pytest.raises(DomainError):
        HyperParams(batch_size=0)
    with pytest.raises(DomainError):
        HyperParams(qa_sampler="dwave")
    HyperParams(learning_rate=0.1).check_protocol_rate()
    with pytest.raises(DomainError):
        HyperParams(learning_rate=0.2).check_protocol_rate()
    assert HyperParams(learning_rate=0.5).sigma == pytest.approx(0.05)
    assert HyperParams().snapshot()["loss"] == "ce"


def test_regime_parse():
    assert Regime.parse("QA") is Regime.QA
    assert Regime.SA.label == "CNN-SA"
    with pytest.raises(DomainError):
        Regime.parse("ga")


def test_sa_takes_longer_than_bp():
    data = synthetic_dataset(80)
    _, bp = train_bp(Network.create(seed=0), data, HyperParams(seed=0))
    _, sa = train_sa(Network.create(seed=0), data, HyperParams(seed=0))
    assert sa.wall_ms > bp.wall_ms
