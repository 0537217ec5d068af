import numpy as np
import pytest

from tecnn.errors import ConfigurationError, ContractViolation
from tecnn.harness.data import synth_digits
from tecnn.harness.presets import build
from tecnn.numerics import (
    Conv2d, Linear, Network, network_backward, network_forward, sgd_momentum_step,
    softmax_cross_entropy,
)
from tecnn.te import TEMatrix
from tecnn.training import (
    TeConfig, TrainConfig, TrainState, attach_te_hook, te_weight_update, train_epoch, warmup_gate,
)


@pytest.fixture(scope="module")
def tiny():
    return synth_digits(10, 240, 60, 16, seed=0)


def _params(net):
    return {k: v.copy() for k, v in net.parameters()}


def _cfg(enabled=True, **te):
    te.setdefault("window", 60)
    te.setdefault("g1", 1.0)
    te.setdefault("g2", 0.5)
    return TrainConfig(lr=0.01, momentum=0.9, batch_size=60, te=TeConfig(enabled=enabled, **te),
                       record_timing=False)


class TestAttachHook:
    def test_usps(self):
        hook = attach_te_hook(build("usps"), TeConfig())
        assert (hook.recorder.n_src, hook.recorder.n_dst) == (144, 10)

    def test_fashionmnist(self):
        hook = attach_te_hook(build("fashionmnist"), TeConfig())
        assert (hook.recorder.n_src, hook.recorder.n_dst) == (120, 10)

    def test_conv_tail_rejected(self):
        net = Network([Conv2d(1, 2, 3)], (1, 5, 5))
        with pytest.raises(ConfigurationError):
            attach_te_hook(net, TeConfig())

    def test_linear_without_softmax_rejected(self):
        with pytest.raises(ConfigurationError):
            attach_te_hook(Network([Linear(4, 2)], (4,)), TeConfig())

    def test_backward_direction_swaps_roles(self):
        hook = attach_te_hook(build("usps"), TeConfig(te_direction="backward"))
        assert (hook.recorder.n_src, hook.recorder.n_dst) == (10, 144)
        assert (hook.recorder.g_src, hook.recorder.g_dst) == (0.99, 2.0)


def _scalar_loop_update(w, te):
    out = [row[:] for row in w]
    for j in range(len(w)):
        for i in range(len(w[0])):
            out[j][i] = w[j][i] * (1.0 - te[i][j])
    return out


class TestWeightUpdate:
    def test_zero_te_is_identity(self):
        w = np.random.default_rng(0).standard_normal((10, 144)).astype(np.float32)
        assert te_weight_update(w, np.zeros((144, 10))).tobytes() == w.tobytes()

    def test_unit_te_zeros_one_weight(self):
        w = np.random.default_rng(1).standard_normal((3, 4))
        te = np.zeros((4, 3))
        te[2, 1] = 1.0
        out = te_weight_update(w, te)
        assert out[1, 2] == 0.0
        mask = np.ones_like(w, bool)
        mask[1, 2] = False
        assert np.array_equal(out[mask], w[mask])

    def test_hand_example(self):
        w, te = [[2.0, -4.0]], [[0.25], [0.5]]
        out = te_weight_update(np.array(w), np.array(te))
        assert out.tolist() == [[1.5, -2.0]]
        assert out.tolist() == _scalar_loop_update(w, te)

    def test_random_matches_scalar_loop(self):
        rng = np.random.default_rng(2)
        w, te = rng.standard_normal((5, 7)), rng.random((7, 5))
        np.testing.assert_array_equal(te_weight_update(w, te), _scalar_loop_update(w.tolist(), te.tolist()))

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolation):
            te_weight_update(np.zeros((2, 3)), np.zeros((2, 3)))


class TestWarmupGate:
    def _state(self, cfg):
        return TrainState.create(build("usps-mini"), cfg, 0)

    def test_closed_at_start(self):
        cfg = _cfg(window=90)
        assert not warmup_gate(self._state(cfg), cfg)

    def test_opens_at_ceil_u_over_b(self):
        cfg = _cfg(window=90)
        state = self._state(cfg)
        rec = state.hook.recorder
        for gb in range(4):
            state.global_batch = gb
            assert warmup_gate(state, cfg) == (gb >= 2 and rec.full)
            rec.record_batch(np.zeros((60, rec.n_src)), np.zeros((60, rec.n_dst)))
        assert cfg.te.warmup_for(60) == 2

    def test_disabled_never_opens(self):
        cfg = _cfg(enabled=False)
        state = self._state(cfg)
        state.global_batch = 100
        assert not warmup_gate(state, cfg)

    def test_short_warmup_rejected(self):
        with pytest.raises(ConfigurationError):
            TeConfig(window=90, warmup_batches=1).validate(60)


def _plain_training(seed, x, y, epochs, lr=0.01, momentum=0.9, b=60):
    """Reference loop with no TE code at all, same seeding scheme."""
    net = build("usps-mini", seed=seed)
    shuffle, dropout, _ = np.random.SeedSequence(seed).spawn(3)
    rng_shuffle, rng_dropout = np.random.default_rng(shuffle), np.random.default_rng(dropout)
    for _ in range(epochs):
        perm = rng_shuffle.permutation(len(x))
        for bi in range(len(x) // b):
            idx = perm[bi * b:(bi + 1) * b]
            trace = network_forward(net, x[idx], "train", rng_dropout)
            _, dlogits = softmax_cross_entropy(trace.output, y[idx])
            sgd_momentum_step(net, network_backward(net, trace, dlogits), lr, momentum)
    return net


def _run(cfg, data, epochs, seed=0):
    net = build("usps-mini", seed=seed)
    state = TrainState.create(net, cfg, seed)
    rows = []
    for _ in range(epochs):
        rows += train_epoch(net, data.x_train, data.y_train, cfg, state).rows
    return net, state, rows


class TestTrainEpoch:
    def test_te_off_matches_plain_loop(self, tiny):
        net, _, _ = _run(_cfg(enabled=False), tiny, 2)
        ref = _plain_training(0, tiny.x_train, tiny.y_train, 2)
        for (k, a), (_, b) in zip(net.parameters(), ref.parameters()):
            assert a.tobytes() == b.tobytes(), k

    def test_forced_zero_matches_baseline(self, tiny):
        on, state, rows_on = _run(_cfg(force_zero=True), tiny, 2)
        off, _, rows_off = _run(_cfg(enabled=False), tiny, 2)
        assert state.te_applications > 0
        assert _params(on).keys() == _params(off).keys()
        for (k, a), (_, b) in zip(on.parameters(), off.parameters()):
            assert a.tobytes() == b.tobytes(), k
        assert rows_on == rows_off

    def test_scope_only_monitored_weight_changes(self, tiny):
        cfg = _cfg()
        on = build("usps-mini", seed=0)
        off = build("usps-mini", seed=0)
        s_on = TrainState.create(on, cfg, 0)
        s_off = TrainState.create(off, _cfg(enabled=False), 0)
        # two batches: the gate opens on the second, so exactly one TE application
        x, y = tiny.x_train[:120], tiny.y_train[:120]
        train_epoch(on, x, y, cfg, s_on)
        train_epoch(off, x, y, _cfg(enabled=False), s_off)
        assert s_on.te_applications == 1
        assert s_on.te.values.any()
        monitored = f"{s_on.hook.linear_index}.weight"
        for (k, a), (_, b) in zip(on.parameters(), off.parameters()):
            if k == monitored:
                assert a.tobytes() != b.tobytes()
            else:
                assert a.tobytes() == b.tobytes(), k

    def test_one_application_per_batch(self, tiny):
        cfg = _cfg()
        _, state, rows = _run(cfg, tiny, 2)
        n = len(tiny.x_train) // 60
        assert state.te_applications == 2 * n - cfg.te.warmup_for(60)
        assert [r.active_pairs > 0 for r in rows] == [False] + [True] * (2 * n - 1)

    def test_every_n_batches(self, tiny):
        _, state, _ = _run(_cfg(te_every_n_batches=3), tiny, 2)
        assert state.te_applications == len([g for g in range(1, 8) if g % 3 == 0])

    def test_no_amplification(self, tiny):
        _, state, rows = _run(_cfg(), tiny, 2)
        assert state.amplification_violations == 0
        assert any(r.te_mean > 0 for r in rows)

    def test_reproducible_rows(self, tiny):
        a = _run(_cfg(pair_fraction=0.2, pair_policy="window"), tiny, 2)[2]
        b = _run(_cfg(pair_fraction=0.2, pair_policy="window"), tiny, 2)[2]
        assert a == b

    def test_pair_policies(self, tiny):
        _, state, rows = _run(_cfg(pair_fraction=0.1), tiny, 1)
        assert {r.active_pairs for r in rows if r.active_pairs} == {64}
        first = state.pairs.pairs
        cfg = _cfg(pair_fraction=0.1)
        net = build("usps-mini")
        state = TrainState.create(net, cfg, 0)
        train_epoch(net, tiny.x_train, tiny.y_train, cfg, state)
        assert state.pairs.pairs == first
        train_epoch(net, tiny.x_train, tiny.y_train, cfg, state)
        assert state.pairs.pairs != first

    def test_backward_direction_runs(self, tiny):
        _, state, rows = _run(_cfg(te_direction="backward"), tiny, 1)
        assert state.te.values.shape == (10, 64)
        assert state.amplification_violations == 0
        assert rows[-1].active_pairs == 640

    def test_te_matrix_zero_when_disabled_or_warming(self, tiny):
        cfg = _cfg(window=180)
        net = build("usps-mini")
        state = TrainState.create(net, cfg, 0)
        assert isinstance(state.te, TEMatrix) and state.te.warmup and not state.te.values.any()
        rows = train_epoch(net, tiny.x_train, tiny.y_train, cfg, state).rows
        assert [r.active_pairs for r in rows[:3]] == [0, 0, 0]
        assert TrainState.create(net, _cfg(enabled=False), 0).te is None

    def test_dataset_smaller_than_batch(self):
        net = build("usps-mini")
        cfg = _cfg(enabled=False)
        with pytest.raises(ConfigurationError):
            train_epoch(net, np.zeros((10, 1, 16, 16), np.float32), np.zeros(10, int), cfg,
                        TrainState.create(net, cfg, 0))
