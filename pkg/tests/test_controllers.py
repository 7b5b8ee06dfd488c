import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adrc_lfa.controllers import (
    AdrcGains,
    AdrcState,
    PidGains,
    RefinerKind,
    ec_step,
    eso_step,
    new_bank,
    refine,
    sgn,
    td_step,
)
from adrc_lfa.errors import ConfigError, DivergenceError


# Direct transcription of the discrete TD / ESO / EC laws, written without
# the package's kernels. Used as the oracle for the compiled implementation.
def oracle_sign(v):
    return (v > 0) - (v < 0)


def oracle_td(v1, v2, chi, h, r):
    l = -r * oracle_sign(v1 - chi + v2 * abs(v2) / (2 * r))
    return v1 + h * v2, v2 + h * l


def oracle_eso(z1, z2, z3, u, p, h, b1, b2, b3, b):
    e1 = z1 - p
    return z1 + h * (z2 - b1 * e1), z2 + h * (z3 - b2 * e1 + b * u), z3 - h * b3 * e1


def oracle_ec(r, p, v2, z2, z3, b0, b1, b2):
    return (b1 * (r - p) + b2 * (v2 - z2) - z3) / b0


def test_sgn_examples():
    assert sgn(-0.5) == -1
    assert sgn(0.0) == 0
    assert sgn(3.7) == 1


def test_td_step_examples():
    g = AdrcGains(h=0.01, td_accel=100)
    s = AdrcState()
    td_step(s, 1.0, g)
    assert (s.v1, s.v2) == (0.0, 1.0)

    s = AdrcState(v1=1.0, v2=1.0)
    td_step(s, 1.0, g)
    assert s.v1 == pytest.approx(1.01, abs=1e-15)
    assert s.v2 == pytest.approx(0.0, abs=1e-15)


@given(st.floats(-100, 100), st.floats(1e-3, 1), st.floats(1e-2, 1e3))
def test_td_fixed_point(chi, h, r):
    s = AdrcState(v1=chi, v2=0.0)
    td_step(s, chi, AdrcGains(h=h, td_accel=r))
    assert (s.v1, s.v2) == (chi, 0.0)


def test_eso_step_example():
    g = AdrcGains(h=0.01, beta1=10, beta2=30, beta3=100, b=1)
    s = AdrcState()
    eso_step(s, 0.5, g)
    assert s.z1 == pytest.approx(0.05, abs=1e-15)
    assert s.z2 == pytest.approx(0.15, abs=1e-15)
    assert s.z3 == pytest.approx(0.5, abs=1e-15)


def test_ec_step_example():
    g = AdrcGains(b0=1, b1=1, b2=0.1)
    s = AdrcState(v2=0.1, z2=0.05, z3=0.02)
    u = ec_step(s, 1.0, 0.8, g)
    assert u == pytest.approx(0.185, abs=1e-15)
    assert s.u_prev == u


def test_ec_step_tracked_system_needs_no_correction():
    s = AdrcState(v2=0.3, z2=0.3, z3=0.0)
    assert ec_step(s, 2.0, 2.0, AdrcGains()) == 0.0


def test_chained_refine_example():
    g = AdrcGains(h=0.01, td_accel=100, beta1=10, beta2=30, beta3=100, b=1, b0=1, b1=1, b2=0.1)
    bank = new_bank("adrc", g, 1)
    u = refine(bank, 0, 1.0, 0.02)
    st_ = bank.state(0)
    assert (st_.v1, st_.v2) == (0.0, 1.0)
    assert st_.z2 == pytest.approx(0.006, abs=1e-15)
    assert st_.z3 == pytest.approx(0.02, abs=1e-15)
    assert u == pytest.approx(1.0594, abs=1e-12)
    assert st_.u_prev == u


def test_pass_through_and_pid_examples():
    assert refine(new_bank("sgd"), 0, 1.0, 0.02) == pytest.approx(0.98, abs=1e-15)
    bank = new_bank("pid", PidGains(1, 0, 0), 1)
    for target, pred in [(1.0, 0.02), (3.0, 3.5), (-2.0, 1.0)]:
        assert refine(bank, 0, target, pred) == target - pred


def test_pid_accumulates_after_output():
    bank = new_bank("pid", PidGains(kp=2, ki=0.5, kd=0.25), 1)
    assert refine(bank, 0, 1.0, 0.0) == 2 * 1 + 0.5 * 0 + 0.25 * 1
    assert refine(bank, 0, 1.0, 0.5) == 2 * 0.5 + 0.5 * 1 + 0.25 * (0.5 - 1)
    s = bank.state(0)
    assert (s.err_sum, s.err_prev) == (1.5, 0.5)


def test_oracle_equivalence_random():
    rng = np.random.default_rng(2024)
    n = 20_000
    for _ in range(n):
        v1, v2, z1, z2, z3, u = rng.normal(0, 3, 6).tolist()
        chi, p = rng.normal(0, 3, 2).tolist()
        h = float(rng.uniform(1e-3, 1))
        r = float(rng.uniform(0.1, 200))
        b1_, b2_, b3_ = rng.uniform(0, 50, 3).tolist()
        b, b0, k1, k2 = rng.normal(0, 2, 4).tolist()
        if b0 == 0:
            continue
        g = AdrcGains(h=h, td_accel=r, beta1=b1_, beta2=b2_, beta3=b3_, b=b, b0=b0, b1=k1, b2=k2)
        s = AdrcState(v1, v2, z1, z2, z3, u)
        td_step(s, chi, g)
        ov1, ov2 = oracle_td(v1, v2, chi, h, r)
        assert abs(s.v1 - ov1) <= 1e-12 and abs(s.v2 - ov2) <= 1e-12
        eso_step(s, p, g)
        oz = oracle_eso(z1, z2, z3, u, p, h, b1_, b2_, b3_, b)
        assert max(abs(s.z1 - oz[0]), abs(s.z2 - oz[1]), abs(s.z3 - oz[2])) <= 1e-12
        out = ec_step(s, chi, p, g)
        assert abs(out - oracle_ec(chi, p, ov2, oz[1], oz[2], b0, k1, k2)) <= 1e-12


def test_td_tracking_acceptance_targets():
    g = AdrcGains(h=0.01, td_accel=100)
    for chi in (-5.0, -1.0, 0.5, 5.0):
        s = AdrcState()
        for _ in range(1000):
            td_step(s, chi, g)
        assert abs(s.v1 - chi) <= 0.05


@settings(max_examples=200)
@given(st.floats(-5, 5))
def test_td_tracking_over_range(chi):
    # bang-bang chatter of the discrete law leaves up to about h^2 * r / 2 per
    # step of residual oscillation; 0.09 bounds the worst case on [-5, 5]
    g = AdrcGains(h=0.01, td_accel=100)
    s = AdrcState()
    for _ in range(1000):
        td_step(s, chi, g)
    assert abs(s.v1 - chi) <= 0.09


def test_degenerate_gains_return_raw_error():
    g = AdrcGains(h=0.2, td_accel=5, beta1=4, beta2=7, beta3=0.0, b=0.7, b0=1, b1=1, b2=0)
    bank = new_bank("adrc", g, 4)
    rng = np.random.default_rng(0)
    for _ in range(500):
        i = int(rng.integers(4))
        t, p = rng.normal(0, 2, 2)
        assert refine(bank, i, t, p) == t - p
    assert np.all(bank.states[:, 4] == 0.0)


@settings(max_examples=100)
@given(st.integers(0, 4), st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=20))
def test_state_isolation(i, calls):
    bank = new_bank("adrc", AdrcGains(), 5)
    bank.states[:] = np.arange(30, dtype=float).reshape(5, 6) / 7
    before = bank.states.copy()
    for t, p in calls:
        refine(bank, i, t, p)
    others = [j for j in range(5) if j != i]
    assert np.array_equal(bank.states[others], before[others])
    assert bank.ticks[i] == len(calls) and bank.ticks[others].sum() == 0


@given(st.floats(1e-3, 2), st.floats(0, 100), st.floats(0, 100), st.floats(0, 100), st.floats(-5, 5))
def test_eso_zero_fixed_point(h, b1, b2, b3, b):
    s = AdrcState()
    g = AdrcGains(h=h, beta1=b1, beta2=b2, beta3=b3, b=b)
    for _ in range(10):
        eso_step(s, 0.0, g)
    assert (s.z1, s.z2, s.z3) == (0.0, 0.0, 0.0)


@given(st.floats(1e-3, 1), st.floats(0, 50), st.lists(st.floats(-5, 5), min_size=1, max_size=30))
def test_beta3_zero_keeps_z3_zero(h, b1, preds):
    s = AdrcState()
    g = AdrcGains(h=h, beta1=b1, beta2=1.0, beta3=0.0)
    for p in preds:
        eso_step(s, p, g)
        assert s.z3 == 0.0


def test_new_bank_examples():
    bank = new_bank("adrc", AdrcGains(), 3)
    assert bank.states.shape == (3, 6) and not bank.states.any()
    assert [bank.state(i) for i in range(3)] == [AdrcState()] * 3
    assert len(new_bank(RefinerKind.SGD, None, 1000)) == 0
    pid = new_bank("pid", PidGains(), 2)
    assert pid.states.shape == (2, 2) and not pid.states.any()


def test_warm_start_policy():
    bank = new_bank("adrc", AdrcGains(), 2, "warm", targets=[4.0, 2.0], predictions=[0.1, 0.2])
    assert bank.state(0).v1 == 4.0 and bank.state(1).z1 == 0.2
    with pytest.raises(ConfigError):
        new_bank("adrc", AdrcGains(), 2, "warm")
    with pytest.raises(ConfigError):
        new_bank("adrc", AdrcGains(), 2, "lukewarm")


@pytest.mark.parametrize("kw", [dict(h=0.0), dict(td_accel=-1.0), dict(b0=0.0), dict(beta1=math.nan)])
def test_invalid_gains_rejected(kw):
    with pytest.raises(ConfigError):
        AdrcGains(**kw)


def test_invalid_gains_lists_every_field():
    with pytest.raises(ConfigError) as exc:
        AdrcGains(h=0, td_accel=0, b0=0)
    msg = str(exc.value)
    assert "adrc.h" in msg and "adrc.r" in msg and "adrc.b0" in msg


def test_bandwidth_parameterization():
    g = AdrcGains.from_bandwidth(5.0)
    assert (g.beta1, g.beta2, g.beta3) == (15.0, 75.0, 125.0)
    assert AdrcGains.from_bandwidth(0.0).beta3 == 0.0


def test_refine_index_and_divergence_errors():
    bank = new_bank("adrc", AdrcGains(), 2)
    with pytest.raises(IndexError):
        refine(bank, 2, 1.0, 0.0)
    with pytest.raises(DivergenceError):
        refine(bank, 0, math.inf, 0.0)


def test_state_check_raises_on_nonfinite():
    s = AdrcState(v1=1e308, v2=1e308)
    with pytest.raises(DivergenceError):
        td_step(s, 0.0, AdrcGains(h=1.0, td_accel=1.0))
