import math

import numpy as np
import pytest

from jindiff.bessel import (
    BesselDriftSpec,
    BesselJumpSpec,
    N_asymptotic_constant,
    _MinFormJump,
    _NaturalScaleString,
    _upper_gamma,
    calibration_constant,
    drift_W,
    example_jump_measure,
    natural_scale_string,
    scaling_family,
    suggested_uv,
)
from jindiff.eigen import g, psi
from jindiff.errors import DomainError, ParameterError
from jindiff.levy import (
    ConstantSV,
    LogPowerSV,
    ScalingFamily,
    b_mean,
    de_bruijn_conjugate,
    fluct_exponent,
)
from jindiff.measure import (
    N_of_gamma,
    PiecewisePowerJump,
    PowerString,
    check_condition_C,
)
from jindiff.quadrature import integrate, integrate_upper_tail


# ---------------------------------------------------------------------------
# drift data


def test_drift_spec_validation():
    with pytest.raises(ParameterError, match="negative"):
        BesselDriftSpec(0.0)
    with pytest.raises(ParameterError, match="negative"):
        BesselDriftSpec(1.5)
    with pytest.raises(ParameterError, match="anchor"):
        BesselDriftSpec(-1.0, x0=1.0)


def test_tail_index_mapping():
    assert BesselDriftSpec(-0.8).alpha == pytest.approx(1.4)
    assert BesselDriftSpec(-2.0).alpha == pytest.approx(2.0)
    assert BesselDriftSpec(-5.0).alpha == pytest.approx(3.5)
    assert BesselDriftSpec.from_alpha(3.5).delta == pytest.approx(-5.0)
    with pytest.raises(ParameterError, match="exceed 1"):
        BesselDriftSpec.from_alpha(1.0)


def test_drift_w_pure_power():
    spec = BesselDriftSpec(-0.8)
    assert drift_W(spec, 2.0) == pytest.approx(2.0 ** -1.8, rel=1e-15)
    xs = np.array([0.25, 1.0, 7.0])
    np.testing.assert_allclose(drift_W(spec, xs), xs ** -1.8, rtol=1e-15)


def test_drift_w_log_perturbed():
    spec = BesselDriftSpec(-0.8, s=2.0, x0=math.e)
    want = math.exp(-3.6) * 2.0
    assert drift_W(spec, math.e ** 2) == pytest.approx(want, rel=1e-14)
    # spliced to the pure power below the anchor, continuous across it
    assert drift_W(spec, 0.5) == pytest.approx(0.5 ** -1.8, rel=1e-15)
    lo = drift_W(spec, spec.x0 * (1.0 - 1e-12))
    hi = drift_W(spec, spec.x0 * (1.0 + 1e-12))
    assert hi == pytest.approx(lo, rel=1e-9)


def test_drift_w_rejects_nonpositive():
    spec = BesselDriftSpec(-0.8)
    with pytest.raises(DomainError):
        drift_W(spec, 0.0)
    with pytest.raises(DomainError):
        drift_W(spec, np.array([1.0, -2.0]))


# ---------------------------------------------------------------------------
# natural-scale string, exact route


def test_unperturbed_string_is_exact_power():
    m = natural_scale_string(BesselDriftSpec.from_alpha(3.5))
    assert isinstance(m, PowerString)
    assert m.theta == pytest.approx(1.0 - 1.0 / 3.5, rel=1e-15)
    assert m.coef == pytest.approx(0.4, rel=1e-15)
    assert m.alpha == pytest.approx(3.5)
    assert isinstance(m.K_sv, ConstantSV)
    # unit tail constant at every scale, not just asymptotically
    xs = np.array([1e-4, 1.0, 3.7e5])
    np.testing.assert_allclose(m.tail(xs) * 2.5 * xs ** (1.0 - 1.0 / 3.5),
                               1.0, rtol=1e-14)


def test_calibration_constant_value():
    # (2 alpha)^(1/alpha - 1), the factor the raw family carries at s = 1
    m = natural_scale_string(BesselDriftSpec.from_alpha(3.5))
    assert m.calibration == pytest.approx(7.0 ** (1.0 / 3.5 - 1.0), rel=1e-15)
    spec = BesselDriftSpec.from_alpha(2.5, s=2.0, x0=10.0)
    want = 5.0 ** (1.0 / 2.5 - 1.0) * (5.0 * math.log(10.0)) ** (-1.0 / 2.5)
    assert calibration_constant(spec) == pytest.approx(want, rel=1e-14)


# ---------------------------------------------------------------------------
# natural-scale string, ladder route


def test_ladder_matches_exact_power_at_s1():
    # force the numeric route where the closed form is known, drift factor
    # included so the calibration's exp(eta_bar/alpha) term is exercised
    num = _NaturalScaleString(BesselDriftSpec.from_alpha(3.5, eta_bar=0.7))
    exact = PowerString(1.0 - 1.0 / 3.5, 0.4)
    xis = np.geomspace(1e-6, 1e12, 13)
    np.testing.assert_allclose(num.tail(xis), exact.tail(xis), rtol=3e-9)
    np.testing.assert_allclose(num.value(xis), exact.value(xis), rtol=3e-9)
    np.testing.assert_allclose(num.density(xis), exact.density(xis),
                               rtol=1e-12)
    for xi in (3.7, 1e6):
        assert num.G(xi) == pytest.approx(exact.G(xi), rel=1e-11)
    assert num.x_dm_below(3.7) == pytest.approx(exact.x_dm_below(3.7),
                                                rel=1e-10)


def test_eigenfunctions_on_ladder_string_match_exact():
    num = _NaturalScaleString(BesselDriftSpec.from_alpha(2.5, eta_bar=0.3))
    exact = PowerString(0.6, 1.0 / 1.5)
    for x in (0.5, 2.0):
        assert psi(num, 1.0, x).value == pytest.approx(
            psi(exact, 1.0, x).value, rel=5e-8)
        assert g(num, 1.0, x).value == pytest.approx(
            g(exact, 1.0, x).value, rel=1e-7)


def test_scale_map_round_trip():
    m = natural_scale_string(BesselDriftSpec.from_alpha(3.5, s=2.0))
    for xi in np.geomspace(1e-8, 1e12, 21):
        assert m.scale_map(m.scale_inverse(xi)) == pytest.approx(xi,
                                                                 rel=1e-10)


def test_scale_inverse_domain():
    m = natural_scale_string(BesselDriftSpec.from_alpha(3.5, s=2.0),
                             xi_max=1e6)
    with pytest.raises(DomainError, match="beyond the prepared ladder"):
        m.scale_inverse(1e10)
    with pytest.raises(DomainError):
        m.scale_inverse(0.0)


def test_perturbed_string_tail_trend():
    # m(xi, inf) (alpha-1) xi^(1-1/alpha) -> (log xi)^((s-1)/alpha) with
    # unit constant; the log corrections die off like 1/log
    alpha, s = 3.5, 2.0
    m = natural_scale_string(BesselDriftSpec.from_alpha(alpha, s=s))
    assert isinstance(m.K_sv, LogPowerSV)
    assert m.K_sv.power == pytest.approx((s - 1.0) / alpha)
    grid = 10.0 ** np.arange(2, 9)
    r = (m.tail(grid) * (alpha - 1.0) * grid ** (1.0 - 1.0 / alpha)
         / np.log(grid) ** ((s - 1.0) / alpha))
    assert np.all(np.diff(r[1:]) < 0.0)
    assert abs(r[-1] - 1.0) < 0.16


def test_weakened_string_tail_trend_from_below():
    alpha, s = 2.5, 0.5
    m = natural_scale_string(BesselDriftSpec.from_alpha(alpha, s=s))
    grid = 10.0 ** np.arange(2, 9)
    r = (m.tail(grid) * (alpha - 1.0) * grid ** (1.0 - 1.0 / alpha)
         / np.log(grid) ** ((s - 1.0) / alpha))
    assert np.all(np.diff(r) > 0.0)
    assert np.all(r < 1.0)
    assert r[-1] > 0.93


def test_ladder_string_internal_identities():
    m = natural_scale_string(BesselDriftSpec.from_alpha(3.5, s=2.0))
    # int_0^xi eta dm = -G(xi) - xi m(xi, inf), by parts
    for xi in (0.37, 42.0):
        lhs = m.x_dm_below(xi) + xi * m.tail(xi)
        assert lhs == pytest.approx(-m.G(xi), rel=1e-12)
    # the density is the tail's negative derivative
    q = integrate(lambda y: m.density(y), 1.0, 100.0, rel_tol=1e-11)
    assert q == pytest.approx(m.tail(1.0) - m.tail(100.0), rel=1e-9)


# ---------------------------------------------------------------------------
# jump family


def test_jump_spec_validation():
    with pytest.raises(ParameterError, match="alpha > 1"):
        BesselJumpSpec(1.0, 0.1)
    for bad_a in (0.0, -0.1, 1.0 / 3.5, 0.5):
        with pytest.raises(ParameterError, match="inner exponent"):
            example_jump_measure(3.5, bad_a, 1.0)


def test_unit_log_power_jump_is_piecewise_power():
    j = example_jump_measure(3.5, 0.25, 1.0)
    assert isinstance(j, PiecewisePowerJump)
    assert j.ci == pytest.approx(2.0 / 3.5)
    assert j.co == pytest.approx(2.0 / 3.5)
    assert j.split == 1.0
    assert isinstance(j.L_sv, ConstantSV)
    # unit tail constant from the crossover on
    assert j.tail(1.0) == pytest.approx(1.0, rel=1e-14)
    assert j.tail(16.0) == pytest.approx(16.0 ** (-2.0 / 3.5), rel=1e-14)
    # the inner branch carries the lighter singularity
    assert j.density(0.01) == pytest.approx((2.0 / 3.5) * 0.01 ** -1.25,
                                            rel=1e-14)


def test_min_form_two_crossings():
    j = example_jump_measure(3.5, 0.25, 2.0)
    assert isinstance(j, _MinFormJump)
    assert j.breakpoints()[0] == 1.0
    assert len(j.breakpoints()) == 3
    x1, x2 = j.breakpoints()[1:]
    # the branches really cross there
    b, q = 2.0 / 3.5 - 0.25, 1.0
    for x in (x1, x2):
        assert b * math.log(x) == pytest.approx(q * math.log(math.log(x)),
                                                rel=1e-10)
    # kink but no jump at the crossings; a genuine drop at 1
    for x in (x1, x2):
        lo = j.density(x * (1.0 - 1e-9))
        hi = j.density(x * (1.0 + 1e-9))
        assert hi == pytest.approx(lo, rel=1e-6)
    assert j.density(1.0) == pytest.approx(2.0 / 3.5)
    assert j.density(1.0 + 1e-12) < 1e-10


def test_min_form_single_crossing_below_one_power():
    j = example_jump_measure(3.5, 0.25, 0.5)
    assert len(j.breakpoints()) == 1
    assert j.breakpoints()[0] > 1.0
    # the log branch blows up at 1+, so the power branch carries through
    assert j.density(1.0 - 1e-9) == pytest.approx(j.density(1.0 + 1e-9),
                                                  rel=1e-6)
    assert isinstance(j.L_sv, LogPowerSV)
    assert j.L_sv.power == pytest.approx(-0.5)


def _split_tail(j, x):
    cuts = [x] + [b for b in j.breakpoints() if b > x]
    out = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        out += integrate(lambda y: j.density(y), lo, hi, rel_tol=1e-12)
    return out + integrate_upper_tail(lambda y: j.density(y), cuts[-1],
                                      rel_tol=1e-12).value


@pytest.mark.parametrize("t,probes", [
    (2.0, (0.3, 1.0, 2.5, 8.7, 453.0)),
    (0.5, (0.3, 1.0, 1.734, 3.85)),
])
def test_min_form_tail_matches_density(t, probes):
    j = example_jump_measure(3.5, 0.25, t)
    for x in probes:
        assert j.tail(x) == pytest.approx(_split_tail(j, x), rel=1e-10)


def test_jump_tail_trends():
    grid = 10.0 ** np.arange(2, 9)
    r2 = (example_jump_measure(3.5, 0.25, 2.0).tail(grid)
          * grid ** (2.0 / 3.5) / np.log(grid))
    assert np.all(np.diff(r2) < 0.0)
    assert np.all(r2 > 1.0)
    assert r2[-1] < 1.10
    r5 = (example_jump_measure(3.5, 0.25, 0.5).tail(grid)
          * grid ** (2.0 / 3.5) / np.log(grid) ** -0.5)
    assert np.all(np.diff(r5) > 0.0)
    assert np.all(r5 < 1.0)
    assert r5[-1] > 0.95


def test_upper_gamma_nonpositive_order():
    # Gamma(1/2, z) = sqrt(pi) erfc(sqrt(z)) seeds an order -1/2 oracle
    z = 1.3
    half = math.sqrt(math.pi) * math.erfc(math.sqrt(z))
    want = (half - z ** -0.5 * math.exp(-z)) / -0.5
    assert _upper_gamma(-0.5, z) == pytest.approx(want, rel=1e-14)
    with pytest.raises(DomainError):
        _upper_gamma(-0.5, 0.0)


def test_family_satisfies_return_time_conditions():
    m = natural_scale_string(BesselDriftSpec.from_alpha(3.5))
    for t in (1.0, 2.0):
        rep = check_condition_C(m, example_jump_measure(3.5, 1.0 / 7.0, t))
        assert rep.holds
        assert rep.infinite_near_zero
        assert rep.witnesses["int_0^1 x dj"] == pytest.approx(2.0 / 3.0,
                                                              rel=1e-9)
        assert rep.witnesses["int_0^1 |G_m| dj"] == pytest.approx(5.6,
                                                                  rel=1e-9)


def test_family_mean_return_time():
    # int_0^x m(y,inf) dy = 1.4 x^(2/7); against density (4/7) x^(-8/7)
    # below 1 and (4/7) x^(-11/7) beyond: 5.6 + 2.8
    m = natural_scale_string(BesselDriftSpec.from_alpha(3.5))
    j = example_jump_measure(3.5, 1.0 / 7.0, 1.0)
    assert b_mean(m, j) == pytest.approx(8.4, rel=1e-9)


# ---------------------------------------------------------------------------
# nested-mean constant


def test_constant_values():
    assert N_asymptotic_constant(3.5, 1.0, 1.0) == pytest.approx(14.0 / 15.0,
                                                                 rel=1e-15)
    assert N_asymptotic_constant(2.0, 1.0, 1.0) == pytest.approx(0.5,
                                                                 rel=1e-15)
    # the log-power integrand contributes 1/p
    assert N_asymptotic_constant(3.5, 1.0, 2.0) == pytest.approx(
        7.0 / 15.0, rel=1e-15)


def test_constant_admissibility():
    with pytest.raises(ParameterError, match="boundary"):
        N_asymptotic_constant(4.0, 1.0, 0.0)
    with pytest.raises(ParameterError, match="stays bounded"):
        N_asymptotic_constant(3.5, 1.0, -2.0)
    with pytest.raises(ParameterError, match="alpha = 2 needs"):
        N_asymptotic_constant(2.0, 1.0, -0.5)
    with pytest.raises(ParameterError, match="alpha >= 2"):
        N_asymptotic_constant(1.5, 1.0, 1.0)


def test_measured_nested_mean_approaches_constant():
    m = natural_scale_string(BesselDriftSpec.from_alpha(3.5))
    j = example_jump_measure(3.5, 1.0 / 7.0, 2.0)
    want = N_asymptotic_constant(3.5, 1.0, 2.0)
    gs = np.geomspace(1e4, 1e10, 4)
    r = np.array([N_of_gamma(m, j, g_) for g_ in gs]) / np.log(gs) ** 2
    # climbing toward 7/15; rules out the constant without the 1/p factor
    assert np.all(np.diff(r) > 0.0)
    assert np.all(r < want)
    assert abs(r[-1] / want - 1.0) < 0.12


def test_measured_nested_mean_unit_log_power():
    m = natural_scale_string(BesselDriftSpec.from_alpha(3.5))
    j = example_jump_measure(3.5, 1.0 / 7.0, 1.0)
    gs = np.geomspace(1e3, 1e6, 4)
    r = np.array([N_of_gamma(m, j, g_) for g_ in gs]) / (
        (14.0 / 15.0) * np.log(gs))
    assert np.all(np.diff(r) < 0.0)
    assert abs(r[-1] - 1.0) < 0.10


# ---------------------------------------------------------------------------
# normalizer pair


def test_suggested_uv_matches_nested_mean_growth():
    u, v = suggested_uv(3.5, 1.0, 1.0)
    for g_ in (1e4, 1e8, 1e14):
        want = (14.0 / 15.0) * math.log(g_)
        assert u(g_) ** 2 * v(g_) == pytest.approx(want, rel=1e-12)


def test_suggested_uv_constant_split():
    u, v = suggested_uv(3.5, 1.0, 1.0, c1=2.0)
    assert u(1e6) ** 2 * v(1e6) == pytest.approx(
        (14.0 / 15.0) * math.log(1e6), rel=1e-12)
    assert u(1e6) == pytest.approx(math.sqrt(2.0) * math.log(1e6) ** 0.25,
                                   rel=1e-12)


def test_suggested_uv_validation():
    with pytest.raises(ParameterError, match="alpha > 2"):
        suggested_uv(2.0, 1.0, 1.0)
    with pytest.raises(ParameterError, match="eps"):
        suggested_uv(3.5, 1.0, 1.0, eps=1.0)


def test_conjugate_of_rescaled_log_matches_drift_part():
    # n(x) = l(x^(1/(2 alpha)))^(-1); its de Bruijn conjugate should track
    # (2 alpha)^(1-s) l(x)
    alpha, s = 3.5, 2.0
    n = LogPowerSV(1.0 - s, coef=(2.0 * alpha) ** (s - 1.0))
    errs = []
    for x in (1e8, 1e12):
        pred = (2.0 * alpha) ** (1.0 - s) * math.log(x)
        errs.append(abs(de_bruijn_conjugate(n, x) / pred - 1.0))
    assert errs[1] < errs[0]
    assert errs[1] < 0.06


def test_scaling_family_wiring():
    fam = scaling_family(3.5)
    assert isinstance(fam, ScalingFamily)
    assert isinstance(fam.m, PowerString)
    assert fam.b == pytest.approx(8.4, rel=1e-9)
    # the recentered exponent normalizes toward -lam^2
    assert -fluct_exponent(fam, 1e4, 1.0) == pytest.approx(1.0, abs=0.35)
