import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from hypothesis.extra.numpy import arrays

from nestfdr import kde
from nestfdr.core import InputError
from nestfdr.null import log_f0
from nestfdr.sc import lfdr_estimate, running_mean_cutoff, sc_procedure


def test_running_mean_hand_example():
    order, k = running_mean_cutoff([0.01, 0.05, 0.2, 0.9], 0.1)
    assert k == 3 and order.tolist() == [0, 1, 2, 3]
    assert running_mean_cutoff(np.ones(10), 0.5)[1] == 0


def test_lfdr_matches_direct_formula():
    Z = np.random.default_rng(0).standard_normal((200, 2))
    lf = lfdr_estimate(Z, 0.8)
    f = kde.fit(Z, n_ref=200)
    direct = np.minimum(1.0, 0.8 * np.exp(log_f0(Z)) / f.batch_eval(Z))
    assert lf.values == pytest.approx(direct, rel=1e-10)
    assert lf.pi0_used == 0.8


def test_lfdr_zero_pi0_and_clamp():
    Z = np.random.default_rng(1).standard_normal((100, 2))
    assert not lfdr_estimate(Z, 0.0).values.any()
    lf = lfdr_estimate(Z, 1.0).values
    f = kde.fit(Z, n_ref=100)
    over = np.exp(log_f0(Z)) > f.batch_eval(Z)
    assert over.any() and np.all(lf[over] == 1.0)
    with pytest.raises(InputError):
        lfdr_estimate(Z, 1.2)


def test_pure_null_lfdr_near_one():
    Z = np.random.default_rng(2).standard_normal((10_000, 2))
    assert np.median(lfdr_estimate(Z, 1.0).values) > 0.8


def _sc_data(seed, n=300):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, 2))
    Z[: n // 5] += 2.0
    return Z


@given(st.integers(0, 1000), st.floats(0.01, 0.3), st.floats(0.0, 0.3))
def test_k_monotone_in_q(seed, q, dq):
    Z = _sc_data(seed)
    assert sc_procedure(Z, q, 0.8).n_rejected <= sc_procedure(Z, min(q + dq, 0.99), 0.8).n_rejected


@given(st.integers(0, 1000))
def test_rejections_are_lower_lfdr_set(seed):
    out = sc_procedure(_sc_data(seed), 0.1, 0.8)
    rej = out.rejected
    if rej.any() and (~rej).any():
        assert out.scores[rej].max() <= out.scores[~rej].min()


@given(arrays(float, st.integers(1, 50), elements=st.floats(0, 1)), st.floats(0.01, 0.99))
def test_cutoff_bruteforce(lfdr, q):
    s = np.sort(lfdr)
    # running means that equal q up to rounding are decided by summation order
    assume(all(abs(s[:j].mean() - q) > 1e-9 for j in range(1, len(s) + 1)))
    _, k = running_mean_cutoff(lfdr, q)
    ok = [j for j in range(1, len(s) + 1) if s[:j].mean() <= q]
    assert k == (max(ok) if ok else 0)
