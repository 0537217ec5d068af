"""Experiment configuration and the flat ``key = value`` config file format."""
import re
from dataclasses import dataclass, field, fields, replace

from ..errors import ConfigurationError
from ..training import TeConfig, TrainConfig
from .presets import TRAINING_DEFAULTS

# human-readable parameter names map onto config fields
ALIASES = {
    "learning_rate": "lr",
    "eta": "lr",
    "threshold_rate_1": "g1",
    "threshold_rate_2": "g2",
    "te_window_length": "window",
    "te_window": "window",
    "u": "window",
    "max_epochs": "epochs",
    "target_accuracy": "target_acc",
    "architecture": "arch",
}

_TE_FIELDS = {f.name for f in fields(TeConfig)} - {"enabled"}


@dataclass
class ExperimentConfig:
    arch: str = "usps"
    dataset: str = "synth:10,2000,16"
    lr: float = 0.01
    momentum: float = 0.9
    dropout: float = 0.25
    batch_size: int = 60
    te: TeConfig = field(default_factory=lambda: TeConfig(g1=5.0, g2=0.99, window=90))
    epochs: int = 10
    target_acc: float = 0.97
    seed: int = 0
    data_seed: int = 0
    out: str = "runs"
    record_timing: bool = True
    eval_batch_size: int = 500

    def validate(self):
        if not 0.0 < self.target_acc <= 1.0:
            raise ConfigurationError("target accuracy must lie in (0, 1]")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError("batch size and epochs must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must lie in [0, 1)")
        self.te.validate(self.batch_size)
        return self

    def train_config(self, te_enabled=None):
        te = self.te if te_enabled is None else replace(self.te, enabled=te_enabled)
        return TrainConfig(self.lr, self.momentum, self.batch_size, te, self.record_timing)

    @classmethod
    def preset_defaults(cls, arch="usps", **overrides):
        """Config with the standard hyperparameters for ``arch``'s dataset."""
        p = TRAINING_DEFAULTS.get(arch, TRAINING_DEFAULTS["usps"])
        cfg = cls(arch=arch, lr=p["lr"], momentum=p["momentum"], dropout=p["dropout"],
                  batch_size=p["batch_size"],
                  te=TeConfig(g1=p["g1"], g2=p["g2"], window=p["window"]))
        return apply_overrides(cfg, overrides)


def normalize_key(key):
    key = re.sub(r"\(.*?\)", "", key).strip().lower()
    key = re.sub(r"[\s\-]+", "_", key)
    return ALIASES.get(key, key)


def _coerce(raw, current):
    if isinstance(current, bool):
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"not a boolean: {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return str(raw).strip() if isinstance(raw, str) else raw


def apply_overrides(cfg, values):
    """Return a copy of ``cfg`` with ``values`` (already-normalized keys) applied.

    ``te`` takes on/off; TE sub-keys (``g1``, ``window``, ...) land in ``cfg.te``.
    """
    top = {}
    te = {}
    for key, raw in values.items():
        if raw is None:
            continue
        key = normalize_key(key)
        if key == "te":
            te["enabled"] = _coerce(raw, True)
        elif key in _TE_FIELDS:
            current = getattr(cfg.te, key)
            if key == "warmup_batches":
                current = 0
            te[key] = _coerce(raw, current)
        elif key in {f.name for f in fields(ExperimentConfig)} - {"te"}:
            top[key] = _coerce(raw, getattr(cfg, key))
        else:
            raise ConfigurationError(f"unknown config key {key!r}")
    return replace(cfg, te=replace(cfg.te, **te), **top)


def parse_config_text(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        values[normalize_key(key)] = value.strip()
    return values


def load_config(path, base=None, **overrides):
    """Read a config file, then apply ``overrides`` (e.g. CLI flags) on top."""
    with open(path, encoding="utf-8") as fh:
        values = parse_config_text(fh.read())
    cfg = base or ExperimentConfig()
    cfg = apply_overrides(cfg, values)
    return apply_overrides(cfg, overrides).validate()
