"""Named, independently reproducible random streams.

Every consumer of randomness (dataset generation, parameter init, minibatch
indices, diffusion noise, time draws, samplers, evaluation) gets its own
Philox stream keyed by ``(master seed, stream name)``. Philox is counter
based, so a stream's full state is two small integer arrays and round-trips
through JSON exactly.
"""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("data", "init_theta", "init_phi", "batch", "noise", "time", "sampler", "eval")


def stream_id(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def make_stream(seed: int, name: str) -> np.random.Generator:
    """Generator for stream ``name`` under master ``seed``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(stream_id(name),))
    return np.random.Generator(np.random.Philox(seq))


class Streams:
    """A bundle of named generators sharing one master seed."""

    def __init__(self, seed: int, names=STREAMS):
        self.seed = int(seed)
        self._gens = {name: make_stream(self.seed, name) for name in names}

    def __getitem__(self, name: str) -> np.random.Generator:
        if name not in self._gens:
            self._gens[name] = make_stream(self.seed, name)
        return self._gens[name]

    def state(self) -> dict:
        return {"seed": self.seed, "streams": {k: _encode(g.bit_generator.state) for k, g in self._gens.items()}}

    @classmethod
    def from_state(cls, blob: dict) -> "Streams":
        out = cls(blob["seed"], names=())
        for name, st in blob["streams"].items():
            gen = make_stream(out.seed, name)
            gen.bit_generator.state = _decode(st)
            out._gens[name] = gen
        return out


def _encode(obj):
    if isinstance(obj, np.ndarray):
        return {"__u64__": [int(v) for v in obj.tolist()]}
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if "__u64__" in obj:
            return np.array(obj["__u64__"], dtype=np.uint64)
        return {k: _decode(v) for k, v in obj.items()}
    return obj
