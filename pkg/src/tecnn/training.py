"""Mini-batch training with transfer-entropy modulation of the last linear layer.

Per batch: forward, record binarized activations of the monitored layer
pair, loss, backward, SGD-momentum step, then (once the warm-up gate
opens) recompute the TE matrix and multiply every monitored weight by
``1 - te`` of its connection.
"""
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractViolation, NumericError
from .harness.metrics import MetricsRow
from .numerics import (
    last_linear_index, network_backward, network_forward, sgd_momentum_step, softmax_cross_entropy,
)
from .te import Recorder, TEMatrix, compute_te_matrix, select_pairs
from .te.estimator import POLICIES

DIRECTIONS = ("forward", "backward")


@dataclass
class TeConfig:
    enabled: bool = True
    g1: float = 2.0
    g2: float = 0.99
    window: int = 100
    pair_fraction: float = 1.0
    pair_policy: str = "epoch"
    te_direction: str = "forward"
    warmup_batches: int = None
    te_every_n_batches: int = 1
    log_base: float = 2.0
    threshold_mode: str = "absolute"
    # run every TE step but apply an all-zero matrix (equivalence checks)
    force_zero: bool = False

    def validate(self, batch_size):
        if self.window < 3:
            raise ConfigurationError("te window must hold at least 3 events")
        if self.pair_policy not in POLICIES:
            raise ConfigurationError(f"pair policy must be one of {POLICIES}")
        if self.te_direction not in DIRECTIONS:
            raise ConfigurationError(f"te direction must be one of {DIRECTIONS}")
        if not 0.0 < self.pair_fraction <= 1.0:
            raise ConfigurationError("pair fraction must lie in (0, 1]")
        if self.te_every_n_batches < 1:
            raise ConfigurationError("te_every_n_batches must be >= 1")
        minimum = math.ceil(self.window / batch_size)
        if self.warmup_batches is not None and self.warmup_batches < minimum:
            raise ConfigurationError(
                f"warmup_batches={self.warmup_batches} would read a partial window; need >= {minimum}")

    def warmup_for(self, batch_size):
        if self.warmup_batches is not None:
            return self.warmup_batches
        return math.ceil(self.window / batch_size)


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 60
    te: TeConfig = field(default_factory=TeConfig)
    record_timing: bool = True


@dataclass
class TeHook:
    """Where TE is measured and applied.

    ``linear_index`` is the monitored (final) linear layer, ``softmax_index``
    the softmax after it. The recorder's source/destination roles follow
    ``direction``; ``connection_te`` maps its matrix back to
    (input neuron, output neuron) orientation.
    """

    linear_index: int
    softmax_index: int
    n_in: int
    n_out: int
    direction: str
    recorder: Recorder

    @property
    def indices(self):
        return self.linear_index, self.softmax_index

    def record(self, trace):
        inputs = trace.inputs[self.linear_index].reshape(len(trace.output), -1)
        outputs = trace.outputs[self.softmax_index]
        if self.direction == "forward":
            self.recorder.record_batch(inputs, outputs)
        else:
            self.recorder.record_batch(outputs, inputs)

    def connection_te(self, te):
        return te.values if self.direction == "forward" else te.values.T


def attach_te_hook(net, cfg):
    """Locate the monitored layer pair and allocate its event recorder."""
    if not cfg.enabled:
        raise ConfigurationError("TE is disabled in this configuration")
    lin = last_linear_index(net)
    n_in = net.layers[lin].in_features
    n_out = net.layers[lin].out_features
    if cfg.te_direction == "forward":
        rec = Recorder(n_in, n_out, cfg.window, cfg.g1, cfg.g2, cfg.threshold_mode)
    else:
        rec = Recorder(n_out, n_in, cfg.window, cfg.g2, cfg.g1, cfg.threshold_mode)
    return TeHook(lin, lin + 1, n_in, n_out, cfg.te_direction, rec)


def te_weight_update(w_updated, te):
    """Scale ``w_updated[j, i]`` (shape out x in) by ``1 - te[i, j]`` (shape in x out)."""
    w_updated = np.asarray(w_updated)
    te = np.asarray(te)
    if te.shape != w_updated.shape[::-1]:
        raise ContractViolation(f"te shape {te.shape} does not match weight shape {w_updated.shape}")
    return w_updated * (1.0 - te.T).astype(w_updated.dtype)


@dataclass
class TrainState:
    """Counters, RNG streams and TE bookkeeping carried across epochs."""

    rng_shuffle: np.random.Generator
    rng_dropout: np.random.Generator
    rng_pairs: np.random.Generator
    hook: TeHook = None
    pairs: object = None
    te: TEMatrix = None
    epoch: int = 0
    batch: int = 0
    global_batch: int = 0
    te_applications: int = 0
    amplification_violations: int = 0
    clamp_stats: dict = field(default_factory=dict)

    @classmethod
    def create(cls, net, cfg, seed):
        """Fresh state; shuffle, dropout and pair streams are independent children of ``seed``."""
        cfg.te.validate(cfg.batch_size)
        shuffle, dropout, pairs = np.random.SeedSequence(seed).spawn(3)
        state = cls(np.random.default_rng(shuffle), np.random.default_rng(dropout),
                    np.random.default_rng(pairs))
        if cfg.te.enabled:
            state.hook = attach_te_hook(net, cfg.te)
            rec = state.hook.recorder
            state.te = TEMatrix.zeros(rec.n_src, rec.n_dst, warmup=True)
        return state

    def rng_states(self):
        return {
            "shuffle": self.rng_shuffle.bit_generator.state,
            "dropout": self.rng_dropout.bit_generator.state,
            "pairs": self.rng_pairs.bit_generator.state,
        }

    def set_rng_states(self, states):
        self.rng_shuffle.bit_generator.state = states["shuffle"]
        self.rng_dropout.bit_generator.state = states["dropout"]
        self.rng_pairs.bit_generator.state = states["pairs"]


def warmup_gate(state, cfg):
    """True once TE may be applied: past the warm-up batches with full windows."""
    if not cfg.te.enabled or state.hook is None:
        return False
    return state.global_batch >= cfg.te.warmup_for(cfg.batch_size) and state.hook.recorder.full


@dataclass
class EpochResult:
    epoch: int
    loss: float
    top1: float
    duration_s: float
    te_s: float
    te_applications: int
    active_pairs: int
    rows: list


def _reselect(state, cfg):
    rec = state.hook.recorder
    state.pairs = select_pairs(rec.n_src, rec.n_dst, cfg.te.pair_fraction, cfg.te.pair_policy,
                               state.rng_pairs)


def epoch_batches(net, x_train, y_train, cfg, state, run_id="run"):
    """Generator form of ``train_epoch``: yields each batch's ``MetricsRow``.

    The ``EpochResult`` is the generator's return value. Durations count
    only time spent inside this generator, so two runs can be stepped
    alternately without charging one for the other's batches.
    """
    te_cfg = cfg.te
    b = cfg.batch_size
    n_batches = len(x_train) // b
    if n_batches == 0:
        raise ConfigurationError(f"training set of {len(x_train)} is smaller than one batch ({b})")
    t_setup = time.perf_counter()
    perm = state.rng_shuffle.permutation(len(x_train))
    if te_cfg.enabled and (te_cfg.pair_policy == "epoch" or state.pairs is None):
        _reselect(state, cfg)

    rows = []
    losses, accs = [], []
    te_s = 0.0
    applications = 0
    active_total = 0
    own = time.perf_counter() - t_setup
    for bi in range(n_batches):
        t0 = time.perf_counter()
        idx = perm[bi * b:(bi + 1) * b]
        xb, yb = x_train[idx], y_train[idx]
        trace = network_forward(net, xb, "train", state.rng_dropout)
        if te_cfg.enabled:
            state.hook.record(trace)
        loss, dlogits = softmax_cross_entropy(trace.output, yb, state.clamp_stats)
        if not math.isfinite(loss):
            raise NumericError(f"non-finite loss at epoch {state.epoch} batch {bi}")
        grads = network_backward(net, trace, dlogits)
        sgd_momentum_step(net, grads, cfg.lr, cfg.momentum)

        te_mean = te_std = 0.0
        active = 0
        if warmup_gate(state, cfg) and state.global_batch % te_cfg.te_every_n_batches == 0:
            t_te = time.perf_counter()
            if te_cfg.pair_policy == "window":
                _reselect(state, cfg)
            te = compute_te_matrix(state.hook.recorder, state.pairs, te_cfg.log_base)
            if te_cfg.force_zero:
                te = TEMatrix.zeros(*te.values.shape)
            layer = net.layers[state.hook.linear_index]
            w_sgd = layer.params["weight"]
            w_te = te_weight_update(w_sgd, state.hook.connection_te(te))
            state.amplification_violations += int((np.abs(w_te) > np.abs(w_sgd)).sum())
            layer.params["weight"] = w_te
            te_s += time.perf_counter() - t_te
            state.te = te
            state.te_applications += 1
            applications += 1
            te_mean, te_std, active = te.mean, te.std, te.active_pairs
            active_total += active

        top1 = float((trace.output.argmax(axis=1) == yb).mean())
        losses.append(loss)
        accs.append(top1)
        batch_s = time.perf_counter() - t0
        own += batch_s
        row = MetricsRow(
            run_id, state.epoch, bi, "train", loss, top1, te_mean, te_std, active,
            batch_s * 1e3 if cfg.record_timing else 0.0,
            own if cfg.record_timing else 0.0,
        )
        rows.append(row)
        state.batch = bi + 1
        state.global_batch += 1
        yield row

    result = EpochResult(state.epoch, float(np.mean(losses)), float(np.mean(accs)), own,
                         te_s, applications, active_total, rows)
    state.epoch += 1
    state.batch = 0
    return result


def train_epoch(net, x_train, y_train, cfg, state, run_id="run"):
    """One pass over a freshly shuffled training set; the final partial batch is dropped."""
    gen = epoch_batches(net, x_train, y_train, cfg, state, run_id)
    while True:
        try:
            next(gen)
        except StopIteration as stop:
            return stop.value


def evaluate(net, x, y, batch_size=500):
    """Mean loss and top-1 accuracy in eval mode."""
    total_loss = 0.0
    correct = 0
    for start in range(0, len(x), batch_size):
        xb, yb = x[start:start + batch_size], y[start:start + batch_size]
        probs = network_forward(net, xb, "eval").output
        loss, _ = softmax_cross_entropy(probs, yb)
        total_loss += loss * len(xb)
        correct += int((probs.argmax(axis=1) == yb).sum())
    return total_loss / len(x), correct / len(x)
