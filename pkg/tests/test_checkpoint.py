import struct

import numpy as np
import pytest

from sadm.checkpoint import (BadMagicError, CheckpointError, ShapeMismatchError, TruncatedCheckpointError,
                             VersionMismatchError, from_bytes, load_checkpoint, save_checkpoint, to_bytes)
from sadm.datasets import DatasetSpec, sample
from sadm.trainer import TrainConfig, run_training

DATA, _ = sample(DatasetSpec(seed=0), 256)
CFG = TrainConfig(batch_size=8, phase1_steps=6, adversarial_rounds=1, steps_per_round_theta=4,
                  steps_per_round_phi=2, shared_batch_per_iteration=True)
MODEL = dict(hidden=8, n_freqs=2, enc_hidden=4, embed_dim=3)


@pytest.fixture(scope="module")
def mid_state():
    state, _ = run_training(CFG, DATA, model_kwargs=MODEL, max_steps=7)
    assert state.pending_batch is not None
    return state


def test_round_trip_is_byte_stable(mid_state):
    blob = to_bytes(mid_state)
    assert to_bytes(from_bytes(blob)) == blob


def test_resumed_state_continues_identically(mid_state):
    copy = from_bytes(to_bytes(mid_state))
    _, rows_a = run_training(None, DATA, state=from_bytes(to_bytes(mid_state)))
    _, rows_b = run_training(None, DATA, state=copy)
    assert rows_a == rows_b
    _, full = run_training(CFG, DATA, model_kwargs=MODEL)
    assert full[7:] == rows_a


def test_save_and_load(tmp_path, mid_state):
    path = tmp_path / "c.sadm"
    save_checkpoint(mid_state, path)
    assert not (tmp_path / "c.sadm.tmp").exists()
    assert to_bytes(load_checkpoint(path)) == to_bytes(mid_state)
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nope.sadm")


def test_corruption_is_detected(mid_state):
    blob = to_bytes(mid_state)
    with pytest.raises(BadMagicError):
        from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(VersionMismatchError, match="version 9"):
        from_bytes(blob[:4] + struct.pack("<I", 9) + blob[8:])
    with pytest.raises(TruncatedCheckpointError, match="truncated"):
        from_bytes(blob[:-5])
    with pytest.raises(CheckpointError, match="trailing"):
        from_bytes(blob + b"\0")


def test_shape_mismatch_is_detected(mid_state):
    blob = bytearray(to_bytes(mid_state))
    (hlen,) = struct.unpack("<Q", blob[8:16])
    first_rank = 16 + hlen
    # the first tensor is theta.W0; its first dimension follows the rank
    dim_at = first_rank + 4
    (dim0,) = struct.unpack("<Q", blob[dim_at:dim_at + 8])
    blob[dim_at:dim_at + 8] = struct.pack("<Q", dim0 + 1)
    with pytest.raises(ShapeMismatchError, match="theta.W0"):
        from_bytes(bytes(blob))
