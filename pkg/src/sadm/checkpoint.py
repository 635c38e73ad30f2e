"""Binary checkpoint format for a full training state.

Layout (all integers little-endian)::

    b"SADM" | u32 version | u64 header length | UTF-8 JSON header | payload

The payload is every tensor listed in the header, in order, each stored as
``u32 rank``, ``rank x u64 dims`` and the float64 values in C order.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .diffusion import DiffusionBatch
from .models import Denoiser, Encoder
from .rng import Streams
from .trainer import Adam, TrainConfig, TrainState

MAGIC = b"SADM"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def _mlp_tensors(prefix: str, params: list[Tensor]) -> list[tuple[str, np.ndarray]]:
    out = []
    for i, p in enumerate(params):
        out.append((f"{prefix}.{'W' if i % 2 == 0 else 'b'}{i // 2}", p.data))
    return out


def _adam_tensors(prefix: str, opt: Adam) -> list[tuple[str, np.ndarray]]:
    return ([(f"{prefix}.m{i}", m) for i, m in enumerate(opt.m)]
            + [(f"{prefix}.v{i}", v) for i, v in enumerate(opt.v)])


def _tensor_list(state: TrainState) -> list[tuple[str, np.ndarray]]:
    tensors = (_mlp_tensors("theta", state.denoiser.parameters())
               + _mlp_tensors("phi", state.encoder.parameters())
               + _adam_tensors("adam_theta", state.opt_theta)
               + _adam_tensors("adam_phi", state.opt_phi))
    if state.pending_batch is not None:
        b = state.pending_batch
        tensors += [("pending.x0", b.x0), ("pending.eps", b.eps), ("pending.xt", b.xt)]
    return tensors


def header_dict(state: TrainState) -> dict:
    den, enc = state.denoiser, state.encoder
    return {
        "denoiser": {"widths": den.widths, "dim": den.dim, "n_freqs": den.n_freqs},
        "encoder": {"widths": enc.widths, "frozen": enc.frozen},
        "config": {k: getattr(state.config, k) for k in state.config.__dataclass_fields__},
        "step": state.step,
        "phase": state.phase,
        "round": state.round,
        "phase_step": state.phase_step,
        "round_pos": state.round_pos,
        "prev_window_mean": state.prev_window_mean,
        "stream_prefix": state.stream_prefix,
        "rng": state.streams.state(),
        "adam_theta": state.opt_theta.hyper(),
        "adam_phi": state.opt_phi.hyper(),
        "pending_t": None if state.pending_batch is None else state.pending_batch.t,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in _tensor_list(state)],
    }


def to_bytes(state: TrainState) -> bytes:
    header = json.dumps(header_dict(state), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(header)), header]
    for _, arr in _tensor_list(state):
        arr = np.ascontiguousarray(arr, dtype="<f8")
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    """Write atomically: a partial file never replaces a good one."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(state))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpointError(
                f"checkpoint truncated while reading {what}: need {n} bytes at offset {self.pos}, "
                f"file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out


def from_bytes(buf: bytes) -> TrainState:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}: not a checkpoint file")
    (version,) = struct.unpack("<I", r.take(4, "version"))
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint format version {version} is not supported (expected {VERSION})")
    (hlen,) = struct.unpack("<Q", r.take(8, "header length"))
    header = json.loads(r.take(hlen, "header").decode("utf-8"))

    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        name = entry["name"]
        (rank,) = struct.unpack("<I", r.take(4, f"rank of {name}"))
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank, f"shape of {name}"))
        if list(dims) != entry["shape"]:
            raise ShapeMismatchError(f"tensor {name}: payload shape {list(dims)} != header shape {entry['shape']}")
        count = int(np.prod(dims, dtype=np.int64))
        raw = r.take(8 * count, f"values of {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after payload")
    return _build_state(header, arrays)


def _expect(arrays: dict, name: str, shape: tuple) -> np.ndarray:
    if name not in arrays:
        raise ShapeMismatchError(f"tensor {name} missing from checkpoint")
    if arrays[name].shape != shape:
        raise ShapeMismatchError(f"tensor {name}: shape {arrays[name].shape} does not match model spec {shape}")
    return arrays[name]


def _mlp_params(arrays: dict, prefix: str, widths: list[int], trainable: bool) -> tuple[list, list]:
    ws, bs = [], []
    for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
        ws.append(Tensor(_expect(arrays, f"{prefix}.W{i}", (fi, fo)), requires_grad=trainable))
        bs.append(Tensor(_expect(arrays, f"{prefix}.b{i}", (fo,)), requires_grad=trainable))
    return ws, bs


def _adam(arrays: dict, prefix: str, params: list[Tensor], hyper: dict) -> Adam:
    opt = Adam(params, hyper["lr"], tuple(hyper["betas"]), hyper["eps"], hyper["mask"])
    opt.m = [_expect(arrays, f"{prefix}.m{i}", p.shape) for i, p in enumerate(params)]
    opt.v = [_expect(arrays, f"{prefix}.v{i}", p.shape) for i, p in enumerate(params)]
    opt.t = hyper["t"]
    return opt


def _build_state(h: dict, arrays: dict) -> TrainState:
    dspec, espec = h["denoiser"], h["encoder"]
    ws, bs = _mlp_params(arrays, "theta", dspec["widths"], True)
    den = Denoiser(widths=dspec["widths"], weights=ws, biases=bs, dim=dspec["dim"], n_freqs=dspec["n_freqs"])
    ws, bs = _mlp_params(arrays, "phi", espec["widths"], True)
    enc = Encoder(widths=espec["widths"], weights=ws, biases=bs)
    enc.set_frozen(espec["frozen"])
    pending = None
    if h["pending_t"] is not None:
        pending = DiffusionBatch(arrays["pending.x0"], h["pending_t"], arrays["pending.eps"], arrays["pending.xt"])
    return TrainState(
        config=TrainConfig(**h["config"]),
        denoiser=den,
        encoder=enc,
        opt_theta=_adam(arrays, "adam_theta", den.parameters(), h["adam_theta"]),
        opt_phi=_adam(arrays, "adam_phi", enc.parameters(), h["adam_phi"]),
        streams=Streams.from_state(h["rng"]),
        step=h["step"],
        phase=h["phase"],
        round=h["round"],
        phase_step=h["phase_step"],
        round_pos=h["round_pos"],
        prev_window_mean=h["prev_window_mean"],
        stream_prefix=h["stream_prefix"],
        pending_batch=pending,
    )


def load_checkpoint(path: str | Path) -> TrainState:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return from_bytes(path.read_bytes())
