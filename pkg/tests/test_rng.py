import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from lerwlab.rng import RngStream, _mix_py, as_stream, draw_uniform, mix64, trial_key, trial_key_range
from lerwlab.walks import run_trials

U64 = st.integers(0, 2 ** 64 - 1)


@given(U64)
@settings(max_examples=200, deadline=None)
def test_python_and_compiled_mixers_agree(z):
    assert int(mix64(np.uint64(z))) == _mix_py(z)


@given(U64, st.integers(0, 10 ** 9), st.integers(1, 50))
@settings(max_examples=50, deadline=None)
def test_trial_key_range_matches_single_keys(key, start, count):
    keys = trial_key_range(np.uint64(key), start, count)
    for i in range(count):
        assert int(keys[i]) == int(trial_key(np.uint64(key), np.uint64(start + i)))


def test_stream_keys_reproducible_and_distinct():
    a, b = RngStream(5), RngStream(5)
    assert a.key == b.key and a.trial_key(3) == b.trial_key(3)
    assert RngStream(5).key != RngStream(6).key
    assert a.substream(1).key != a.substream(2).key != a.key
    assert as_stream(5) == RngStream(5) and as_stream(None) == RngStream(0)


def test_uniform_draws_look_uniform():
    key = np.uint64(RngStream(1).key)
    u = np.array([draw_uniform(key, i) for i in range(20000)])
    assert u.min() >= 0 and u.max() < 1
    assert stats.kstest(u, "uniform").pvalue > 1e-3


def test_run_trials_independent_of_workers_and_chunking():
    def fn(keys):
        return (keys % np.uint64(1000)).astype(np.int64), np.zeros(keys.size, np.int64)

    s = RngStream(9)
    a = run_trials(fn, s, 1000, workers=1)
    b = run_trials(fn, s, 1000, workers=3)
    c = run_trials(fn, s, 1000, workers=2, chunk=7)
    for x, y, z in zip(a, b, c):
        assert np.array_equal(x, y) and np.array_equal(x, z)
    assert int(a[0][17]) == s.trial_key(17) % 1000
