import numpy as np
import pytest

from conftest import random_lstm
from oracles import fd_grad
from kwspot.loss import Alignment, maxpool_loss, xent_sequence
from kwspot.model import ConfigError, DnnParams, LstmParams, dnn_forward, lstm_forward
from kwspot.trainer import (DnnTrainer, LstmTrainer, TrainConfig, add_grads, bptt,
                            dnn_backprop, init_dnn, init_lstm, init_params,
                            lstm_batch_loss_grad, run_schedule, sgd_step)

LOSSES = {"xent": xent_sequence, "maxpool": maxpool_loss}


def max_rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-7)))


def test_init_ranges_and_determinism():
    a = init_lstm(420, 64, 32, 2, seed=7)
    b = init_lstm(420, 64, 32, 2, seed=7)
    c = init_lstm(420, 64, 32, 2, seed=8)
    for name, t in a.tensors().items():
        np.testing.assert_array_equal(t, b.tensors()[name])
        if name.startswith("b_"):
            assert np.all(t == 0.1)
        else:
            assert np.all(np.abs(t) <= 0.2)
    assert any(not np.array_equal(t, c.tensors()[n]) for n, t in a.tensors().items())
    d = init_params("dnn", 1, (620, 128, 128, 128, 128, 2))
    assert all(np.all(b == 0.1) for b in d.biases)
    assert all(np.all(np.abs(w) <= 0.2) for w in d.weights)
    with pytest.raises(ConfigError):
        init_params("cnn", 0, (1, 2))


@pytest.mark.parametrize("kind", ["xent", "maxpool"])
def test_bptt_matches_finite_differences(rng, kind):
    p = random_lstm(4, 3, 2, seed=11)
    X = rng.normal(size=(7, 4))
    al = Alignment("u", [(1, 3), (5, 6)], 7)
    value, grads = bptt(p, X, al, kind)
    f = lambda: LOSSES[kind](lstm_forward(p, X)[0], al).value
    assert value == pytest.approx(f(), abs=1e-12)
    for name, t in p.tensors().items():
        assert max_rel_err(grads.tensors()[name], fd_grad(f, t)) <= 1e-4, name


@pytest.mark.parametrize("kind", ["xent", "maxpool"])
def test_dnn_backprop_matches_finite_differences(rng, kind):
    p = init_dnn((4, 5, 5, 2), seed=2)
    X = rng.normal(size=(7, 4))
    al = Alignment("u", [(1, 3)], 7)
    _, grads = dnn_backprop(p, X, al, kind)
    f = lambda: LOSSES[kind](dnn_forward(p, X), al).value
    for name, t in p.tensors().items():
        assert max_rel_err(grads.tensors()[name], fd_grad(f, t)) <= 1e-4, name


def test_maxpool_keyword_gradient_flows_only_through_selected_frame(rng):
    p = random_lstm(4, 3, 2, seed=4)
    X = rng.normal(size=(6, 4))
    al = Alignment("u", [(0, 5)], 6)  # all keyword, no background
    _, grads = bptt(p, X, al, "maxpool")
    sel = maxpool_loss(lstm_forward(p, X)[0], al).selected_frames[0]
    # frames after the selected one cannot influence it: truncating there
    # must give the same gradient
    _, trunc = bptt(p, X[:sel + 1], Alignment("u", [(0, sel)], sel + 1), "maxpool")
    for name, g in grads.tensors().items():
        np.testing.assert_allclose(g, trunc.tensors()[name], atol=1e-14)


def test_sgd_step_examples():
    p = LstmParams.zeros(1, 1, 1, 1)
    g = LstmParams(**{k: np.full(v.shape, 2.0) for k, v in p.tensors().items()})
    assert sgd_step(p, g, 0.5, 1).W_ix[0, 0] == -1.0
    q = random_lstm(3, 2, 2)
    same = sgd_step(q, g.__class__(**{k: np.ones_like(v) for k, v in q.tensors().items()}), 0.0, 5)
    for name, t in q.tensors().items():
        np.testing.assert_array_equal(same.tensors()[name], t)


def test_half_batches_equal_full_batch(rng):
    p = random_lstm(4, 3, 2, seed=3)
    Xs = [rng.normal(size=(6, 4)) for _ in range(4)]
    als = [Alignment(f"u{k}", [(1, 3)], 6) for k in range(4)]
    _, g_full, n_full = lstm_batch_loss_grad(p, Xs, als, "xent")
    _, g_a, n_a = lstm_batch_loss_grad(p, Xs[:2], als[:2], "xent")
    _, g_b, n_b = lstm_batch_loss_grad(p, Xs[2:], als[2:], "xent")
    full = sgd_step(p, g_full, 0.1, n_full)
    halves = sgd_step(p, add_grads(g_a, g_b), 0.1, n_a + n_b)
    for name, t in full.tensors().items():
        np.testing.assert_allclose(halves.tensors()[name], t, rtol=0, atol=1e-14)


def test_padded_batch_matches_single_utterances(rng):
    p = random_lstm(4, 3, 2, seed=6)
    Xs = [rng.normal(size=(T, 4)) for T in (5, 9)]
    als = [Alignment("a", [(1, 2)], 5), Alignment("b", [(3, 6)], 9)]
    v, g, n = lstm_batch_loss_grad(p, Xs, als, "maxpool")
    v0, g0 = bptt(p, Xs[0], als[0], "maxpool")
    v1, g1 = bptt(p, Xs[1], als[1], "maxpool")
    assert v == pytest.approx(v0 + v1, abs=1e-12)
    for name, t in g.tensors().items():
        np.testing.assert_allclose(t, g0.tensors()[name] + g1.tensors()[name], atol=1e-12)


def test_nan_gradient_aborts(rng):
    p = random_lstm(4, 3, 2)
    p.W_yr[0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        bptt(p, rng.normal(size=(3, 4)), Alignment("u", [], 3))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(initial_lr=0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(loss_kind="ctc")
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"momentum": 0.9})
    assert TrainConfig.from_dict(TrainConfig().to_dict()) == TrainConfig()


# ---------------------------------------------------------------- schedule


class Scripted:
    """Fake model: params are an int counting accepted updates; dev losses
    come from a script, one per evaluation."""

    def __init__(self, dev_losses):
        self.dev = list(dev_losses)
        self.calls = []

    def train_epoch(self, params, lr, epoch):
        self.calls.append((params, lr, epoch))
        return params + 1, 0.0

    def dev_loss(self, params):
        return self.dev.pop(0)


def test_schedule_constant_lr_when_improving():
    s = Scripted([10.0] + [9.0 - 0.1 * k for k in range(20)])
    _, tlog = run_schedule(TrainConfig(initial_lr=0.1), 0, s.train_epoch, s.dev_loss)
    assert tlog.accepted_lrs == [0.1] * 20
    assert tlog.stop_reason == "max_epochs"
    assert not any(r.repeated for r in tlog.records)


def test_schedule_halves_and_repeats():
    # initial, improve, degrade, improve (repeat of epoch 2), improve
    s = Scripted([10.0, 9.0, 9.5, 8.0, 7.0])
    best, tlog = run_schedule(TrainConfig(initial_lr=1.0, max_epochs=3), 0, s.train_epoch, s.dev_loss)
    assert tlog.accepted_lrs == [1.0, 0.5, 0.5]
    assert [r.epoch for r in tlog.accepted] == [1, 2, 3]
    assert [r.repeated for r in tlog.accepted] == [False, True, False]
    rejected = [r for r in tlog.records if not r.accepted]
    assert [(r.epoch, r.lr) for r in rejected] == [(2, 1.0)]
    # the repeat restarts from the params accepted after epoch 1
    assert s.calls[1][0] == s.calls[2][0] == 1
    assert best == 3


def test_schedule_stops_at_min_lr():
    s = Scripted([1.0] + [2.0] * 9)
    _, tlog = run_schedule(TrainConfig(initial_lr=1.0), 0, s.train_epoch, s.dev_loss)
    assert tlog.stop_reason == "min_lr"
    assert [r.lr for r in tlog.records] == [0.5 ** k for k in range(9)]
    assert not tlog.accepted


def test_schedule_lr_only_halves():
    rng = np.random.default_rng(0)
    s = Scripted(list(rng.uniform(0, 1, 500)))
    _, tlog = run_schedule(TrainConfig(initial_lr=0.3), 0, s.train_epoch, s.dev_loss)
    lrs = [r.lr for r in tlog.records]
    for a, b in zip(lrs, lrs[1:]):
        assert b == a or b == a / 2
    assert len(tlog.accepted) <= 20


def _tiny_data(rng, n, T=12, n_i=4):
    out = []
    for k in range(n):
        X = rng.normal(size=(T, n_i))
        s = int(rng.integers(0, T - 4))
        X[s:s + 3] += 2.0
        out.append((X, Alignment(f"u{k}", [(s, s + 2)], T)))
    return out


def test_lstm_training_is_deterministic_and_learns(rng):
    data = _tiny_data(rng, 24)
    cfg = TrainConfig(initial_lr=0.5, batch_size=4, max_epochs=5, seed=3)
    p0 = init_lstm(4, 3, 2, seed=3)
    runs = []
    for _ in range(2):
        tr = LstmTrainer(cfg, data[:16], data[16:])
        runs.append(run_schedule(cfg, p0, tr.train_epoch, tr.dev_loss))
    (pa, la), (pb, lb) = runs
    for name, t in pa.tensors().items():
        np.testing.assert_array_equal(t, pb.tensors()[name])
    assert la.to_jsonl() == lb.to_jsonl()
    assert la.accepted[-1].dev_loss < la.initial_dev_loss


def test_dnn_trainer_runs(rng):
    data = _tiny_data(rng, 10)
    cfg = TrainConfig(initial_lr=0.5, batch_size=16, max_epochs=3)
    tr = DnnTrainer(cfg, data[:8], data[8:])
    p, tlog = run_schedule(cfg, init_dnn((4, 5, 2)), tr.train_epoch, tr.dev_loss)
    assert isinstance(p, DnnParams) and tlog.records
    with pytest.raises(ConfigError):
        DnnTrainer(TrainConfig(loss_kind="maxpool"), data[:8], data[8:])
