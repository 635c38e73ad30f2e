import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sadm.rng import STREAMS, Streams, make_stream, stream_id


def test_streams_are_reproducible_and_independent():
    a = make_stream(5, "noise").standard_normal(1000)
    assert np.array_equal(a, make_stream(5, "noise").standard_normal(1000))
    b = make_stream(5, "time").standard_normal(1000)
    c = make_stream(6, "noise").standard_normal(1000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.1
    assert abs(np.corrcoef(a, c)[0, 1]) < 0.1


def test_stream_ids_are_distinct():
    assert len({stream_id(n) for n in STREAMS}) == len(STREAMS)


def test_negative_seed_rejected():
    with pytest.raises(ValueError, match="non-negative"):
        make_stream(-1, "data")


@given(st.integers(0, 2**32), st.integers(0, 50))
def test_state_round_trips_through_json(seed, burn):
    s = Streams(seed)
    s["noise"].standard_normal(burn)
    s["extra"].integers(0, 10, burn)
    blob = json.loads(json.dumps(s.state()))
    r = Streams.from_state(blob)
    for name in list(STREAMS) + ["extra"]:
        assert np.array_equal(s[name].standard_normal(8), r[name].standard_normal(8))
