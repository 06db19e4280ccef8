"""Checkpoint container: weights, optimiser state and the run config.

Layout (little-endian), following the feature-file conventions::

    offset  size  field
    0       4     magic b"SOOM"
    4       4     version, u32 (= 1)
    8       4     number of tensor blocks, u32
    12      4     config text length C, u32
    16      4     metadata JSON length J, u32
    20      C     config text (utf-8, ``[run]`` section)
    20+C    J     metadata JSON (utf-8)
    ...           blocks

Each block is ``name length (u16), name (utf-8), dtype code (u8),
ndim (u8), shape (ndim x u64), payload``. Weights are named as in the
parameter store; Adam moments are stored as ``adam.m/<name>`` and
``adam.v/<name>``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import FormatError, UsageError
from .model import GroundingModel
from .numerics import Tensor
from .params import ParamStore

MAGIC = b"SOOM"
VERSION = 1
HEADER = struct.Struct("<4sIIII")
_NAME = struct.Struct("<H")
_BLOCK = struct.Struct("<BB")
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def _pack_block(name: str, arr: np.ndarray) -> bytes:
    dt = np.dtype(arr.dtype).newbyteorder("<")
    if dt not in _DTYPE_CODES:
        raise UsageError(f"cannot store {arr.dtype} tensor {name!r}")
    key = name.encode("utf-8")
    parts = [_NAME.pack(len(key)), key, _BLOCK.pack(_DTYPE_CODES[dt], arr.ndim)]
    parts += [struct.pack("<Q", s) for s in arr.shape]
    parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return b"".join(parts)


def save_checkpoint(path, model: GroundingModel, optimizer=None, step: int = 0, extra: dict | None = None) -> None:
    blocks = [(k, p.data) for k, p in model.params.items()]
    meta = {"step": int(step), "params": list(model.params.keys())}
    if optimizer is not None:
        state = optimizer.state()
        meta["adam_t"] = int(state["t"])
        blocks += [(f"adam.m/{k}", v) for k, v in state["m"].items()]
        blocks += [(f"adam.v/{k}", v) for k, v in state["v"].items()]
    if extra:
        meta["extra"] = extra
    cfg_text = model.cfg.to_text().encode("utf-8")
    meta_text = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, len(blocks), len(cfg_text), len(meta_text)))
        fh.write(cfg_text)
        fh.write(meta_text)
        for name, arr in blocks:
            fh.write(_pack_block(name, arr))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"truncated {what}: expected {n} bytes, got {len(self.raw) - self.pos}",
                              offset=self.pos)
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out


def read_checkpoint(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    """Raw contents: ``(config text, metadata, name -> array)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    r = _Reader(path.read_bytes())
    magic, version, n_blocks, c_len, j_len = HEADER.unpack(r.take(HEADER.size, "header"))
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    cfg_text = r.take(c_len, "config").decode("utf-8")
    at = r.pos
    try:
        meta = json.loads(r.take(j_len, "metadata").decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"metadata is not JSON: {exc.msg}", offset=at + exc.pos) from None
    arrays = {}
    for _ in range(n_blocks):
        (k_len,) = _NAME.unpack(r.take(_NAME.size, "block name length"))
        name = r.take(k_len, "block name").decode("utf-8")
        at = r.pos
        code, ndim = _BLOCK.unpack(r.take(_BLOCK.size, "block header"))
        if code not in _CODE_DTYPES:
            raise FormatError(f"unknown dtype code {code} in block {name!r}", offset=at)
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim, "block shape"))
        dt = _CODE_DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        payload = r.take(nbytes, f"payload of {name!r}")
        arrays[name] = np.frombuffer(payload, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if r.pos != len(r.raw):
        raise FormatError(f"{len(r.raw) - r.pos} trailing bytes after last block", offset=r.pos)
    return cfg_text, meta, arrays


def load_checkpoint(path, with_optimizer: bool = False):
    """Rebuild the model (and optionally an ``AdamW`` with its moments).

    Returns ``(model, meta)`` or ``(model, optimizer, meta)``.
    """
    cfg_text, meta, arrays = read_checkpoint(path)
    cfg = RunConfig.from_text(cfg_text)
    names = meta.get("params")
    if not names:
        raise FormatError("checkpoint metadata lists no parameters")
    missing = [k for k in names if k not in arrays]
    if missing:
        raise FormatError(f"checkpoint lacks parameter blocks: {', '.join(missing[:5])}")
    store = ParamStore((k, Tensor(arrays[k], requires_grad=True, name=k)) for k in names)
    reference = GroundingModel.init(cfg).params
    for k, p in reference.items():
        if k not in store or store[k].shape != p.shape:
            raise FormatError(f"parameter {k!r} missing or misshapen for this config")
    model = GroundingModel(cfg, store)
    if not with_optimizer:
        return model, meta
    from .train import AdamW
    opt = AdamW(store, cfg.lr, cfg.weight_decay)
    if "adam_t" in meta:
        opt.load_state({"t": meta["adam_t"],
                        "m": {k: arrays[f"adam.m/{k}"] for k in names},
                        "v": {k: arrays[f"adam.v/{k}"] for k in names}})
    return model, opt, meta
