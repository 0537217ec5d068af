"""Binary checkpoints.

Layout (all integers little-endian)::

    b"TECNN1"  u16 version  u32 record count
    record*:   u16 name length, name (utf-8), u8 dtype code, u8 ndim,
               ndim x u32 dims, raw values
    u32 CRC-32 of everything before it

Records hold parameters (``param/``), momentum buffers (``opt/``), layer
buffers (``buffer/``), TE recorder windows and pair set (``te/``) and one
``meta`` record of sorted-key JSON (architecture, counters, RNG states).
"""
import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from ..errors import CheckpointError
from ..numerics import Network
from ..te import PairSet

MAGIC = b"TECNN1"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1"), 3: np.dtype("<i8"), 4: np.dtype("u1")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("uint8"): 2, np.dtype("int64"): 3}
_JSON = 4


def _record(name, arr, code=None):
    arr = np.ascontiguousarray(arr)
    if code is None:
        code = _CODES[arr.dtype]
    arr = arr.astype(_DTYPES[code], copy=False)
    key = name.encode("utf-8")
    head = struct.pack("<H", len(key)) + key + struct.pack("<BB", code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def _json_record(name, obj):
    payload = np.frombuffer(json.dumps(obj, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    return _record(name, payload, _JSON)


def save_checkpoint(path, net, state=None, extra=None):
    """Write ``net`` (and optionally a ``TrainState``) to ``path``."""
    meta = {
        "layers": [dict(kind=layer.kind, **layer.hyperparameters()) for layer in net.layers],
        "input_shape": list(net.input_shape),
        "dtype": net.dtype.name,
        "seed": net.rng_seed,
        "extra": extra or {},
    }
    records = []
    for key, value in net.parameters():
        records.append(_record(f"param/{key}", value))
    for key, value in net.opt_state.items():
        records.append(_record(f"opt/{key}", value))
    for key, value in net.buffers():
        records.append(_record(f"buffer/{key}", value))
    if state is not None:
        meta["state"] = {
            "epoch": state.epoch,
            "batch": state.batch,
            "global_batch": state.global_batch,
            "te_applications": state.te_applications,
            "amplification_violations": state.amplification_violations,
            "rng": state.rng_states(),
        }
        if state.hook is not None:
            for side, win in state.hook.recorder.state().items():
                records.append(_record(f"te/{side}/buf", win["buf"]))
                meta["state"][f"window_{side}"] = {"head": win["head"], "count": win["count"]}
            if state.pairs is not None:
                records.append(_record("te/pairs/src", state.pairs.src.astype(np.int64)))
                records.append(_record("te/pairs/dst", state.pairs.dst.astype(np.int64)))
                meta["state"]["pairs"] = {"fraction": state.pairs.fraction, "policy": state.pairs.policy}
    records.insert(0, _json_record("meta", meta))
    body = MAGIC + struct.pack("<HI", VERSION, len(records)) + b"".join(records)
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))


@dataclass
class Checkpoint:
    net: Network
    meta: dict
    arrays: dict

    @property
    def epoch(self):
        return self.meta.get("state", {}).get("epoch", 0)

    def restore_state(self, state):
        """Copy counters, RNG streams, windows and pairs into a fresh ``TrainState``."""
        saved = self.meta.get("state")
        if saved is None:
            raise CheckpointError("checkpoint carries no training state")
        state.epoch = saved["epoch"]
        state.batch = saved["batch"]
        state.global_batch = saved["global_batch"]
        state.te_applications = saved["te_applications"]
        state.amplification_violations = saved["amplification_violations"]
        state.set_rng_states(saved["rng"])
        if state.hook is not None and "window_src" in saved:
            windows = {}
            for side in state.hook.recorder.state():
                info = saved[f"window_{side}"]
                windows[side] = {"buf": self.arrays[f"te/{side}/buf"], **info}
            state.hook.recorder.load_state(windows)
            if "pairs" in saved:
                state.pairs = PairSet(self.arrays["te/pairs/src"], self.arrays["te/pairs/dst"],
                                      saved["pairs"]["fraction"], saved["pairs"]["policy"])
        return state


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 10 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum failure")
    pos = len(MAGIC)
    version, count = struct.unpack_from("<HI", body, pos)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version} (expected {VERSION})")
    pos += 6
    arrays = {}
    meta = None
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos:pos + nlen].decode("utf-8")
        pos += nlen
        code, ndim = struct.unpack_from("<BB", body, pos)
        pos += 2
        dims = struct.unpack_from(f"<{ndim}I", body, pos)
        pos += 4 * ndim
        dtype = _DTYPES[code]
        size = int(np.prod(dims)) * dtype.itemsize
        arr = np.frombuffer(body, dtype=dtype, count=int(np.prod(dims)), offset=pos).reshape(dims)
        pos += size
        if code == _JSON:
            meta = json.loads(arr.tobytes().decode("utf-8"))
        else:
            arrays[name] = arr.astype(arr.dtype.newbyteorder("="))
    if meta is None:
        raise CheckpointError(f"{path}: missing meta record")
    net = Network.from_specs(meta["layers"], meta["input_shape"], seed=meta["seed"],
                             dtype=np.dtype(meta["dtype"]))
    for key, _ in list(net.parameters()):
        net.set(key, arrays[f"param/{key}"].copy())
    for key in net.opt_state:
        net.opt_state[key] = arrays[f"opt/{key}"].copy()
    for key, _ in list(net.buffers()):
        net.set(key, arrays[f"buffer/{key}"].copy())
    return Checkpoint(net, meta, arrays)
