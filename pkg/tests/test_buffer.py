import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from otta.buffer import RingBuffer, Trial, Weighting


def trial(i, c=3, t=5):
    return Trial(np.full((c, t), float(i)), trial_id=i)


def test_ema_weights_frozen():
    # m(1-m)^(n-1-i) for n=3, m=0.1 -> 0.081, 0.09, 0.1 normalized by 0.271
    np.testing.assert_allclose(Weighting("ema", 0.1).weights(3), [0.081 / 0.271, 0.09 / 0.271, 0.1 / 0.271], rtol=1e-14)
    np.testing.assert_allclose(Weighting("ema", 0.1).weights(3), [0.298893, 0.332103, 0.369004], atol=1e-6)


def test_linear_and_uniform_weights():
    np.testing.assert_allclose(Weighting("linear").weights(4), np.arange(1, 5) / 10)
    np.testing.assert_allclose(Weighting("uniform").weights(4), np.full(4, 0.25))


@given(st.sampled_from(["uniform", "linear", "ema(0.1)", "ema(0.5)", "ema(0.9)"]), st.integers(1, 200))
def test_weights_normalized_and_monotone(text, n):
    w = Weighting.parse(text).weights(n)
    assert w.shape == (n,)
    assert abs(w.sum() - 1) < 1e-12
    assert np.all(np.diff(w) >= -1e-15)


def test_weighting_parse_roundtrip():
    for text in ("uniform", "linear", "ema(0.1)", "ema(0.25)"):
        assert str(Weighting.parse(text)) == text
    assert Weighting.parse("ema") == Weighting("ema", 0.1)
    for bad in ("ema(2)", "ema(x)", "cubic", "ema0.1"):
        with pytest.raises(ValueError):
            Weighting.parse(bad)


def test_fifo_eviction_order():
    buf = RingBuffer(3)
    evicted = [buf.push(trial(i)) for i in range(1, 6)]
    assert evicted[:3] == [None, None, None]
    assert [e.trial_id for e in evicted[3:]] == [1, 2]
    assert buf.ids() == [3, 4, 5]
    assert buf.newest.trial_id == 5
    assert buf.full
    assert buf.stacked().shape == (3, 3, 5)
    np.testing.assert_array_equal(buf.stacked()[:, 0, 0], [3, 4, 5])


def test_buffer_rejects_bad_input():
    buf = RingBuffer(4)
    buf.push(trial(1))
    with pytest.raises(ValueError):
        buf.push(trial(2, c=4))
    with pytest.raises(ValueError):
        buf.push(trial(1))
    with pytest.raises(ValueError):
        RingBuffer(0)
    with pytest.raises(ValueError):
        Trial(np.array([[np.inf]]))
    with pytest.raises(ValueError):
        Trial(np.zeros(3))


@given(st.integers(1, 10), st.integers(1, 40))
def test_buffer_keeps_last_b(cap, n):
    buf = RingBuffer(cap)
    for i in range(1, n + 1):
        buf.push(trial(i, 2, 2))
    assert buf.ids() == list(range(max(1, n - cap + 1), n + 1))
    assert len(buf.weights()) == len(buf)
