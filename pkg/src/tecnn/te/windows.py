"""Ring buffers of binarized neuron events."""
import numpy as np

from ..errors import ContractViolation


def binarize(activation, g):
    """1 where ``activation > g`` (strict), else 0. Works on scalars and arrays."""
    out = np.asarray(activation) > g
    if out.ndim == 0:
        return int(out)
    return out.astype(np.uint8)


class BinaryWindow:
    """Fixed-capacity FIFO of event rows, oldest evicted first.

    ``width`` channels are stored side by side so that a whole layer of
    neurons can be appended in lockstep; ``channel(i)`` extracts a single
    neuron's window.
    """

    def __init__(self, capacity, width=1, dtype=np.uint8):
        if capacity < 1:
            raise ValueError("window capacity must be positive")
        self.capacity = int(capacity)
        self.width = int(width)
        self._buf = np.zeros((self.capacity, self.width), dtype=dtype)
        self._head = 0
        self.count = 0

    @classmethod
    def from_bits(cls, bits, capacity=None):
        bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
        win = cls(capacity or max(len(bits), 1))
        win.append(bits)
        return win

    def __len__(self):
        return min(self.count, self.capacity)

    @property
    def full(self):
        return self.count >= self.capacity

    def append(self, rows):
        rows = np.asarray(rows)
        if self.width == 1 and rows.ndim == 1:
            rows = rows[:, None]
        if rows.ndim != 2 or rows.shape[1] != self.width:
            raise ContractViolation(f"expected rows of width {self.width}, got shape {rows.shape}")
        b = rows.shape[0]
        self.count += b
        if b >= self.capacity:
            self._buf[:] = rows[-self.capacity:]
            self._head = 0
            return
        end = self._head + b
        if end <= self.capacity:
            self._buf[self._head:end] = rows
        else:
            split = self.capacity - self._head
            self._buf[self._head:] = rows[:split]
            self._buf[:end - self.capacity] = rows[split:]
        self._head = end % self.capacity

    def snapshot(self):
        """Stored rows in chronological order, shape ``(len(self), width)``."""
        if self.count < self.capacity:
            return self._buf[:self.count].copy()
        return np.concatenate([self._buf[self._head:], self._buf[:self._head]])

    def bits(self):
        return self.snapshot()[:, 0] if self.width == 1 else self.snapshot()

    def channel(self, i):
        win = BinaryWindow(self.capacity, 1, self._buf.dtype)
        win._buf[:, 0] = self._buf[:, i]
        win._head = self._head
        win.count = self.count
        return win

    def state(self):
        return {"buf": self._buf.copy(), "head": self._head, "count": self.count}

    def load_state(self, state):
        if state["buf"].shape != self._buf.shape:
            raise ContractViolation("window state shape mismatch")
        self._buf[:] = state["buf"]
        self._head = int(state["head"])
        self.count = int(state["count"])


class Recorder:
    """Source and destination event windows for one monitored layer pair.

    Both sides are appended together, one row per sample, so they always
    share capacity and count. In ``"relative"`` threshold mode an
    activation fires when it exceeds ``g`` times that neuron's mean
    activation over the current window (including the incoming batch).
    """

    def __init__(self, n_src, n_dst, capacity, g_src, g_dst, threshold_mode="absolute"):
        if threshold_mode not in ("absolute", "relative"):
            raise ValueError(f"unknown threshold mode {threshold_mode!r}")
        self.n_src = int(n_src)
        self.n_dst = int(n_dst)
        self.g_src = float(g_src)
        self.g_dst = float(g_dst)
        self.threshold_mode = threshold_mode
        self.src = BinaryWindow(capacity, self.n_src)
        self.dst = BinaryWindow(capacity, self.n_dst)
        if threshold_mode == "relative":
            self._raw_src = BinaryWindow(capacity, self.n_src, np.float64)
            self._raw_dst = BinaryWindow(capacity, self.n_dst, np.float64)

    @property
    def capacity(self):
        return self.src.capacity

    @property
    def count(self):
        return self.src.count

    @property
    def full(self):
        return self.src.full

    def _thresholds(self, raw, acts, g):
        raw.append(acts)
        return g * raw.snapshot().mean(axis=0)

    def record_batch(self, src_acts, dst_acts):
        src_acts = np.asarray(src_acts).reshape(len(src_acts), -1)
        dst_acts = np.asarray(dst_acts).reshape(len(dst_acts), -1)
        if src_acts.shape[0] != dst_acts.shape[0]:
            raise ContractViolation(
                f"source has {src_acts.shape[0]} rows, destination {dst_acts.shape[0]}")
        if src_acts.shape[1] != self.n_src or dst_acts.shape[1] != self.n_dst:
            raise ContractViolation("activation widths do not match the recorder")
        if self.threshold_mode == "absolute":
            g_src, g_dst = self.g_src, self.g_dst
        else:
            g_src = self._thresholds(self._raw_src, src_acts, self.g_src)
            g_dst = self._thresholds(self._raw_dst, dst_acts, self.g_dst)
        self.src.append((src_acts > g_src).astype(np.uint8))
        self.dst.append((dst_acts > g_dst).astype(np.uint8))

    def _windows(self):
        wins = {"src": self.src, "dst": self.dst}
        if self.threshold_mode == "relative":
            wins.update(raw_src=self._raw_src, raw_dst=self._raw_dst)
        return wins

    def state(self):
        return {name: win.state() for name, win in self._windows().items()}

    def load_state(self, state):
        for name, win in self._windows().items():
            win.load_state(state[name])
