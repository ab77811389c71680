import numpy as np
import pytest

from jindiff.errors import (
    DivergenceError,
    ParameterError,
    VerificationError,
)
from jindiff.levy import (
    ConstantSV,
    LogPowerSV,
    ProductSV,
    ScalingFamily,
    TabulatedSV,
    b_mean,
    check_slow_variation,
    chi,
    construct_uv,
    de_bruijn_conjugate,
    fluct_exponent,
    tail_estimate,
)
from jindiff.measure import LebesgueString, PiecewisePowerJump, PowerString


# ---------------------------------------------------------------------------
# drift b


def test_b_matches_closed_form_power_pair():
    # |G|(y) = 2 sqrt(y); int_0^1 2 y^{1/2 - 5/4} dy = 8, int_1^inf
    # 2 y^{1/2 - 2} dy = 4
    m = PowerString(0.5)
    j = PiecewisePowerJump(1.0, -1.25, 1.0, -2.0)
    assert b_mean(m, j) == pytest.approx(12.0, rel=1e-9)


def test_b_linear_in_jump_mass():
    m = PowerString(0.5)
    j = PiecewisePowerJump(1.0, -1.25, 1.0, -2.0)
    assert b_mean(m, j.scaled(3.0, 1.0)) == pytest.approx(36.0, rel=1e-9)


def test_b_needs_finite_string_tail():
    j = PiecewisePowerJump(1.0, -1.25, 1.0, -2.0)
    with pytest.raises(DivergenceError, match="mean return time"):
        b_mean(LebesgueString(1.0), j)


def test_b_heavy_jump_tail_diverges():
    # outer density y^{-1.2} against |G| ~ y^{1/2}: the upper integral grows
    m = PowerString(0.5)
    j = PiecewisePowerJump(1.0, -1.25, 1.0, -1.2)
    with pytest.raises(DivergenceError, match="does not converge"):
        b_mean(m, j)


def test_b_splits_at_interior_density_kink():
    # moving the kink must not cost accuracy: same closed form piecewise,
    # |G| = 2 sqrt(y) against y^{-1.25} below s and y^{-2} above
    m = PowerString(0.5)
    s = 7.3e-3
    j = PiecewisePowerJump(1.0, -1.25, 1.0, -2.0, split=s)
    exact = 8.0 * s**0.25 + 4.0 / np.sqrt(s)
    assert b_mean(m, j) == pytest.approx(exact, rel=1e-9)


# ---------------------------------------------------------------------------
# jump part chi of the Laplace exponent


def test_chi_closed_form_gamma_tail():
    # Lebesgue string: g = e^{-sqrt(lam) y}; against the density
    # 0.5 y^{-3/2} on both sides of 1 the integral is sqrt(pi) lam^{1/4}
    m = LebesgueString(1.0)
    j = PiecewisePowerJump(0.5, -1.5, 0.5, -1.5)
    for lam in (1.0, 16.0):
        exact = np.sqrt(np.pi) * lam**0.25
        assert chi(m, j, lam) == pytest.approx(exact, rel=5e-14)


def test_chi_zero_lambda():
    m = LebesgueString(1.0)
    j = PiecewisePowerJump(0.5, -1.5, 0.5, -1.5)
    assert chi(m, j, 0.0) == 0.0


def test_chi_rejects_negative_lambda():
    m = LebesgueString(1.0)
    j = PiecewisePowerJump(0.5, -1.5, 0.5, -1.5)
    with pytest.raises(ParameterError):
        chi(m, j, -1.0)


def test_chi_additive_over_jump_pieces():
    # zeroing one power piece at a time decomposes the measure exactly
    m = PowerString(0.6, 0.8)
    whole = PiecewisePowerJump(1.0, -1.1, 1.0, -1.8)
    inner = PiecewisePowerJump(1.0, -1.1, 0.0, -1.8)
    outer = PiecewisePowerJump(0.0, -1.1, 1.0, -1.8)
    total = chi(m, whole, 1.0)
    assert chi(m, inner, 1.0) + chi(m, outer, 1.0) == pytest.approx(
        total, rel=1e-8)


def test_chi_increasing_and_concave_in_lambda():
    m = PowerString(0.6, 0.8)
    j = PiecewisePowerJump(1.0, -1.1, 1.0, -1.8)
    lams = np.array([0.5, 1.0, 2.0, 4.0])
    vals = np.array([chi(m, j, la) for la in lams])
    assert np.all(np.diff(vals) > 0.0)
    slopes = np.diff(vals) / np.diff(lams)
    assert np.all(np.diff(slopes) < 0.0)


# ---------------------------------------------------------------------------
# the rescaled family


def _matched_family(u=None, v=None):
    # theta = 5/7 pairs with tail exponent -11/7 at alpha = 7/2
    m = PowerString(5.0 / 7.0)
    j = PiecewisePowerJump(1.0, -1.0, 1.0, -11.0 / 7.0)
    return ScalingFamily(m, j, 3.5, u or ConstantSV(1.0), v or ConstantSV(1.0))


def test_family_rescales_string_and_jump_exactly():
    fam = _matched_family(u=LogPowerSV(0.25), v=LogPowerSV(0.5))
    gamma = 1e4
    s = gamma ** (3.5 / 2.0)
    cv = gamma ** (2.5 / 2.0) / LogPowerSV(0.25)(s)
    cm = gamma / LogPowerSV(0.5)(s)
    mg = fam.string_at(gamma)
    jg = fam.jump_at(gamma)
    for x in (1e-6, 0.37, 1.0, 42.0):
        assert mg.value(x) == pytest.approx(cv * fam.m.value(s * x), rel=5e-15)
        assert jg.density(x) == pytest.approx(cm * s * fam.j.density(s * x),
                                              rel=5e-15)
        assert jg.tail(x) == pytest.approx(cm * fam.j.tail(s * x), rel=5e-15)
    assert fam.lam_base(gamma, 2.0) == pytest.approx(
        2.0 / (np.sqrt(gamma) * LogPowerSV(0.25)(s)), rel=1e-15)


def test_family_needs_heavy_enough_alpha_and_tail():
    m = PowerString(5.0 / 7.0)
    j = PiecewisePowerJump(1.0, -1.0, 1.0, -11.0 / 7.0)
    with pytest.raises(ParameterError):
        ScalingFamily(m, j, 1.0, ConstantSV(1.0), ConstantSV(1.0))
    with pytest.raises(ParameterError):
        ScalingFamily(LebesgueString(1.0), j, 3.5, ConstantSV(1.0),
                      ConstantSV(1.0))


def test_b_gamma_closed_form_matches_direct_quadrature():
    fam = _matched_family(u=LogPowerSV(0.25), v=LogPowerSV(0.5))
    gamma = 1e4
    direct = b_mean(fam.string_at(gamma), fam.jump_at(gamma))
    assert fam.b_gamma(gamma) == pytest.approx(direct, rel=1e-9)


def test_fluct_exponent_zero_lambda_and_sign():
    fam = _matched_family()
    assert fluct_exponent(fam, 1e4, 0.0) == 0.0
    assert fluct_exponent(fam, 1e4, 1.0) < 0.0
    with pytest.raises(ParameterError):
        fluct_exponent(fam, 1e4, -1.0)
    with pytest.raises(ParameterError):
        fluct_exponent(fam, 0.0, 1.0)


def test_fluct_exponent_three_routes_agree():
    """Base-pair evaluation, the rescaled pair, and chi - b lam share no
    quadrature structure, so triple agreement pins the scaling identities."""
    fam = _matched_family()
    gamma, lam = 1e4, 1.0
    r1 = fluct_exponent(fam, gamma, lam)
    r2 = fluct_exponent(fam, gamma, lam, via_scaled=True)
    r3 = (chi(fam.string_at(gamma), fam.jump_at(gamma), lam)
          - fam.b_gamma(gamma) * lam)
    assert r2 == pytest.approx(r1, rel=1e-7)
    assert r3 == pytest.approx(r1, rel=1e-6)


def test_fluct_exponent_grows_with_lambda():
    fam = _matched_family()
    vals = [-fluct_exponent(fam, 1e4, la) for la in (0.5, 1.0, 2.0)]
    assert np.all(np.diff(vals) > 0.0)


# ---------------------------------------------------------------------------
# slowly varying algebra and the normalizer construction


def test_log_power_values_and_clamp():
    f = LogPowerSV(0.5, coef=3.0)
    assert f(np.e**4) == pytest.approx(6.0, rel=1e-15)
    # below e the log clamps at 1, keeping f positive everywhere
    assert f(1.0) == 3.0
    assert f(1e-9) == 3.0


def test_product_algebra_flattens():
    f = (LogPowerSV(1.0) * ConstantSV(2.0)) ** 0.5
    x = 1e8
    assert f(x) == pytest.approx(np.sqrt(2.0 * np.log(x)), rel=1e-14)
    assert all(not isinstance(g, ProductSV) for g, _ in f.factors)


def test_tabulated_sv_hits_nodes_and_validates():
    xs = np.geomspace(1e2, 1e10, 9)
    ys = np.log(xs)
    f = TabulatedSV(xs, ys)
    assert f(xs[3]) == pytest.approx(ys[3], rel=1e-12)
    with pytest.raises(ParameterError):
        TabulatedSV([1.0, 1.0], [1.0, 2.0])
    with pytest.raises(ParameterError):
        TabulatedSV([1.0, 2.0], [1.0, -2.0])
    with pytest.raises(ParameterError):
        TabulatedSV([1.0], [1.0])


def test_slow_variation_check_windows():
    # a 5% window over 20 doublings accepts log but not log^2; doubling the
    # horizon accepts log^2; a genuine power never passes
    assert check_slow_variation(LogPowerSV(1.0)).ok
    assert not check_slow_variation(LogPowerSV(2.0)).ok
    assert check_slow_variation(LogPowerSV(2.0), doublings=40).ok
    assert not check_slow_variation(lambda x: x**0.1).ok


def test_de_bruijn_conjugate_constant():
    assert de_bruijn_conjugate(ConstantSV(4.0), 1e8) == pytest.approx(
        0.25, rel=1e-12)


def test_de_bruijn_conjugate_defining_identity():
    for f in (LogPowerSV(1.0), LogPowerSV(0.5)):
        for x in (1e8, 1e10):
            y = de_bruijn_conjugate(f, x)
            assert abs(y * f(x * y) - 1.0) < 1e-7
    # the conjugate of a growing normalizer keeps shrinking
    assert de_bruijn_conjugate(LogPowerSV(1.0), 1e10) < de_bruijn_conjugate(
        LogPowerSV(1.0), 1e8)


def test_construct_uv_explicit_log_n():
    m = PowerString(5.0 / 7.0)
    j = PiecewisePowerJump(1.0, -1.0, 1.0, -11.0 / 7.0)
    built = construct_uv(m, j, 3.5, N=LogPowerSV(1.0))
    s = 1e8
    # K = L = 1 so S = N and u = (log)^{1/4}, v = (log)^{1/2}
    assert built.u(s) == pytest.approx(np.log(s) ** 0.25, rel=1e-12)
    assert built.v(s) == pytest.approx(np.log(s) ** 0.5, rel=1e-12)
    assert built.u(s) ** 2 * built.v(s) / built.N(s) == pytest.approx(
        1.0, rel=1e-12)


def test_construct_uv_measures_n_by_default():
    m = PowerString(5.0 / 7.0)
    j = PiecewisePowerJump(1.0, -1.0, 1.0, -11.0 / 7.0)
    built = construct_uv(m, j, 3.5)
    # increments of the measured N reproduce the analytic log slope
    # (245/24) ln(10^4); the additive constant cancels in the difference
    incr = built.N(1e10) - built.N(1e6)
    assert incr == pytest.approx(245.0 / 24.0 * np.log(1e4), rel=5e-3)
    assert check_slow_variation(built.N, x0=1e6).ok


def test_construct_uv_rejects_degenerate_n():
    # constant N leaves K/u constant, which the monotonicity check refuses
    m = PowerString(5.0 / 7.0)
    j = PiecewisePowerJump(1.0, -1.0, 1.0, -11.0 / 7.0)
    with pytest.raises(VerificationError, match="strictly decreasing"):
        construct_uv(m, j, 3.5, N=ConstantSV(2.0))


def test_construct_uv_rejects_bad_p():
    m = PowerString(5.0 / 7.0)
    j = PiecewisePowerJump(1.0, -1.0, 1.0, -11.0 / 7.0)
    with pytest.raises(ParameterError):
        construct_uv(m, j, 3.5, p=0.0)


# ---------------------------------------------------------------------------
# overshoot tail envelope


def test_tail_estimate_trivial_normalizers():
    fam = _matched_family()
    assert tail_estimate(fam, 10.0) == pytest.approx(1e-2, rel=1e-12)
    assert tail_estimate(fam, 100.0) == pytest.approx(1e-4, rel=1e-12)


def test_tail_estimate_decreasing_for_log_normalizers():
    fam = _matched_family(u=LogPowerSV(0.25), v=LogPowerSV(0.5))
    vals = [tail_estimate(fam, s) for s in (1e3, 1e4, 1e5)]
    assert np.all(np.array(vals) > 0.0)
    assert np.all(np.diff(vals) < 0.0)
    with pytest.raises(ParameterError):
        tail_estimate(fam, 0.0)
