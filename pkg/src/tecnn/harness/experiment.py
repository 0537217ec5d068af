"""Single runs and paired TE-on / TE-off comparisons."""
import hashlib
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigurationError, NumericError
from ..training import TrainState, epoch_batches, evaluate
from . import presets
from .data import load_idx_dataset, synth_digits
from .metrics import MetricsRow

log = logging.getLogger(__name__)


def load_dataset(source, seed=0):
    """``synth:classes,n_train,side[,n_test]`` or ``idx:IMG,LBL[,IMG_TEST,LBL_TEST]``."""
    kind, _, rest = source.partition(":")
    parts = [p for p in rest.split(",") if p]
    if kind == "synth":
        classes, n_train, side = (int(p) for p in parts[:3]) if parts else (10, 2000, 16)
        n_test = int(parts[3]) if len(parts) > 3 else n_train // 2
        return synth_digits(classes, n_train, n_test, side, seed=seed)
    if kind == "idx":
        if len(parts) not in (2, 4):
            raise ConfigurationError("idx dataset needs IMG,LBL or IMG,LBL,IMG_TEST,LBL_TEST")
        return load_idx_dataset(*parts)
    raise ConfigurationError(f"unknown dataset source {source!r}")


def param_hash(net):
    h = hashlib.sha256()
    for key, value in net.parameters():
        h.update(key.encode())
        h.update(np.ascontiguousarray(value).tobytes())
    return h.hexdigest()


@dataclass
class RunResult:
    run_id: str
    te_enabled: bool
    init_hash: str
    test_top1: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    epoch_s: list = field(default_factory=list)
    te_s: list = field(default_factory=list)
    te_pair_evaluations: list = field(default_factory=list)
    target_epoch: int = None
    total_s: float = 0.0
    diverged: bool = False
    error: str = None
    amplification_violations: int = 0
    te_applications: int = 0
    rows: list = field(default_factory=list, repr=False)
    net: object = field(default=None, repr=False)
    state: object = field(default=None, repr=False)

    @property
    def epochs_run(self):
        return len(self.test_top1)

    @property
    def avg_epoch_s(self):
        return float(np.mean(self.epoch_s)) if self.epoch_s else 0.0

    def summary(self, comparison_epoch=None):
        out = {
            "run_id": self.run_id,
            "te": self.te_enabled,
            "target_epoch": self.target_epoch,
            "target_reached": self.target_epoch is not None,
            "epochs_run": self.epochs_run,
            "avg_epoch_s": self.avg_epoch_s,
            "total_s": self.total_s,
            "test_top1": self.test_top1,
            "epoch_s": self.epoch_s,
            "te_s": self.te_s,
            "te_pair_evaluations": self.te_pair_evaluations,
            "te_applications": self.te_applications,
            "amplification_violations": self.amplification_violations,
            "diverged": self.diverged,
            "error": self.error,
            "init_hash": self.init_hash,
        }
        if comparison_epoch is not None:
            k = comparison_epoch - 1
            out["top1_at_comparison"] = self.test_top1[k] if k < len(self.test_top1) else None
        return out


class Session:
    """One training run, advanced a batch at a time by ``step``."""

    def __init__(self, cfg, dataset, te_enabled=None, run_id=None, net=None, state=None,
                 stop_at_target=True, on_epoch=None):
        self.cfg = cfg
        self.dataset = dataset
        self.tcfg = cfg.train_config(te_enabled)
        enabled = self.tcfg.te.enabled
        if net is None:
            net = presets.build(cfg.arch, seed=cfg.seed, dropout=cfg.dropout,
                                classes=dataset.spec.classes, input_shape=dataset.spec.image_shape)
        if state is None:
            state = TrainState.create(net, self.tcfg, cfg.seed)
        self.net, self.state = net, state
        self.stop_at_target = stop_at_target
        self.on_epoch = on_epoch
        self.result = RunResult(run_id or ("te" if enabled else "baseline"), enabled, param_hash(net),
                                net=net, state=state)
        self.done = state.epoch >= cfg.epochs
        self._batches = None

    def step(self):
        """Advance one batch (plus evaluation at epoch end); sets ``done`` when the run should stop."""
        if self._batches is None:
            self._batches = epoch_batches(self.net, self.dataset.x_train, self.dataset.y_train,
                                          self.tcfg, self.state, self.result.run_id)
        try:
            next(self._batches)
        except StopIteration as stop:
            self._batches = None
            self._end_epoch(stop.value)
        except NumericError as exc:
            self._batches = None
            log.warning("%s diverged in epoch %d: %s", self.result.run_id, self.state.epoch, exc)
            self.result.diverged = True
            self.result.error = str(exc)
            self.done = True
            return False
        return self._batches is None

    def run_epoch(self):
        while not self.done:
            if self.step():
                break

    def _end_epoch(self, ep):
        cfg, result, state = self.cfg, self.result, self.state
        t0 = time.perf_counter()
        loss, top1 = evaluate(self.net, self.dataset.x_test, self.dataset.y_test, cfg.eval_batch_size)
        elapsed = ep.duration_s + time.perf_counter() - t0
        result.rows.extend(ep.rows)
        result.rows.append(MetricsRow(
            result.run_id, ep.epoch, len(ep.rows), "test", loss, top1, 0.0, 0.0, 0,
            0.0, elapsed if cfg.record_timing else 0.0))
        result.test_top1.append(top1)
        result.test_loss.append(loss)
        result.epoch_s.append(elapsed)
        result.total_s += elapsed
        result.te_s.append(ep.te_s)
        result.te_pair_evaluations.append(ep.active_pairs)
        log.info("%s epoch %d: loss %.4f top1 %.4f (%.2fs)", result.run_id, ep.epoch + 1, loss, top1, elapsed)
        if self.on_epoch is not None:
            self.on_epoch(self.net, state, result)
        if result.target_epoch is None and top1 >= cfg.target_acc:
            result.target_epoch = ep.epoch + 1
            self.done = self.done or self.stop_at_target
        self.done = self.done or state.epoch >= cfg.epochs

    def finish(self):
        self.result.amplification_violations = self.state.amplification_violations
        self.result.te_applications = self.state.te_applications
        return self.result


def run_single(cfg, dataset, te_enabled=None, run_id=None, net=None, state=None,
               stop_at_target=True, on_epoch=None):
    """Train until the test top-1 reaches ``cfg.target_acc`` or ``cfg.epochs`` epochs pass.

    ``net`` / ``state`` let a caller resume from a checkpoint. ``on_epoch``
    is called as ``on_epoch(net, state, result)`` after every epoch.
    ``total_s`` sums the wall-clock time of this run's epochs (training
    plus evaluation).
    """
    session = Session(cfg, dataset, te_enabled, run_id, net, state, stop_at_target, on_epoch)
    while not session.done:
        session.run_epoch()
    return session.finish()


def run_interleaved(sessions):
    """Step ``sessions`` batch by batch, reversing the turn order each round, until all finish."""
    order = list(sessions)
    while not all(s.done for s in order):
        for session in order:
            if not session.done:
                session.step()
        order.reverse()
    return [s.finish() for s in sessions]


def comparison_epoch(te_run, base_run, cap):
    """The earlier of the two target epochs, else the last epoch both runs completed."""
    reached = [r.target_epoch for r in (te_run, base_run) if r.target_epoch is not None]
    if reached:
        return min(reached)
    return max(1, min(te_run.epochs_run, base_run.epochs_run, cap))


def run_experiment(cfg, dataset=None, interleave=True):
    """Paired TE-on / TE-off runs with identical seeds and hyperparameters.

    The two runs never execute concurrently. With ``interleave`` they
    take turns batch by batch (TE, baseline, baseline, TE, ...) so drifts
    in machine speed affect both alike, and each run is charged only for
    its own batches and evaluations; otherwise the TE run completes first.
    Returns ``(report, te_run, baseline_run)``.
    """
    cfg.validate()
    dataset = dataset if dataset is not None else load_dataset(cfg.dataset, cfg.data_seed)
    te = Session(cfg, dataset, te_enabled=True, run_id="te")
    base = Session(cfg, dataset, te_enabled=False, run_id="baseline")
    if interleave:
        run_interleaved([te, base])
    else:
        for session in (te, base):
            while not session.done:
                session.run_epoch()
    te_run, base_run = te.finish(), base.finish()
    k = comparison_epoch(te_run, base_run, cfg.epochs)
    report = {
        "arch": cfg.arch,
        "dataset": cfg.dataset,
        "seed": cfg.seed,
        "target_acc": cfg.target_acc,
        "comparison_epoch": k,
        "same_initialization": te_run.init_hash == base_run.init_hash,
        "te_config": asdict(cfg.te),
        "runs": {"te": te_run.summary(k), "baseline": base_run.summary(k)},
    }
    return report, te_run, base_run


def format_report(report):
    """Plain-text results table: epochs to target, top-1 at the comparison epoch, durations."""
    te, base = report["runs"]["te"], report["runs"]["baseline"]
    k = report["comparison_epoch"]

    def target(r):
        return str(r["target_epoch"]) if r["target_reached"] else "not reached"

    def pct(v):
        return "n/a" if v is None else f"{100 * v:.2f}%"

    lines = [
        f"{'':32s}{'TE':>14s}{'baseline':>14s}",
        f"{'Target ' + format(100 * report['target_acc'], 'g') + '% accuracy in epoch':32s}"
        f"{target(te):>14s}{target(base):>14s}",
        f"{'Top 1 accuracy at epoch ' + str(k):32s}{pct(te['top1_at_comparison']):>14s}"
        f"{pct(base['top1_at_comparison']):>14s}",
        f"{'Average epoch duration':32s}{te['avg_epoch_s']:>13.2f}s{base['avg_epoch_s']:>13.2f}s",
        f"{'Total training duration':32s}{te['total_s']:>13.2f}s{base['total_s']:>13.2f}s",
    ]
    return "\n".join(lines)
