"""Strings (speed measures) and jump measures on (0, inf).

A string is a non-decreasing, right-continuous m; dm is the speed measure of
a natural-scale diffusion.  This module provides Stieltjes integration
against dm, the iterated integrals G^k, the singularity index d(m), the
admissibility check for jumping-in measures, and the nested proof quantities
N, F, M used by the gamma-sweep harness.

Normalization convention: strings with finite tail mass store the
m(inf) = 0 representative; strings with infinite tail are pinned to
m(1) = -1.  Tabulated strings keep their given values verbatim.

Three calculus backends coexist on purpose.  Strings in the power/affine
families carry their calculus as exact power-log polynomials; tabulated
strings get exact piecewise-linear recursions on their atoms; everything
else falls back to a dense log-grid with cumulative Simpson integration.
The grid backend doubles as an independent cross-check of the closed forms.
"""

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import PchipInterpolator

from .errors import (
    ConditioningError,
    DivergenceError,
    DomainError,
    ParameterError,
)
from .powerlog import PowerLogPoly
from .quadrature import (
    classify_zero_integral,
    integrate,
    integrate_upper_tail,
    integrate_zero_singular,
)


def _check_positive(x):
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0.0):
        raise DomainError(f"strings live on (0, inf); got x = {x}")
    return arr


# ---------------------------------------------------------------------------
# strings


class String:
    """Base string.  Subclasses fix the family; see module docstring for the
    normalization convention."""

    finite_tail = False
    has_density = False
    K_sv = None  # slowly varying tail part, attached when known

    def value(self, x):
        raise NotImplementedError

    def tail(self, x):
        """m(x, inf) as a measure mass; infinite-tail strings raise."""
        raise NotImplementedError

    def density(self, x):
        raise NotImplementedError

    def m_zero_finite(self):
        """True when lim_{x->0} m(x) > -inf (index d(m) = 0)."""
        raise NotImplementedError

    def x_dm_below(self, x):
        """int_0^x y dm(y), the (m . s) majorant ingredient."""
        raise NotImplementedError

    def G(self, x):
        """G_m(x) = int_0^x m(y) dy."""
        raise NotImplementedError

    def mass(self, a, b):
        """m((a, b])."""
        return self.value(b) - self.value(a)

    def scaled(self, value_scale, arg_scale):
        """The string x -> value_scale * m(arg_scale * x)."""
        return ScaledString(self, value_scale, arg_scale)

    def _plp_pair(self):
        """(m_tilde, dm-density) as PowerLogPoly, or None."""
        return None

    _calc_cache = None

    def calc(self):
        if self._calc_cache is None:
            pair = self._plp_pair()
            if pair is not None:
                self._calc_cache = _PolyCalc(self, *pair)
            elif isinstance(self, TabulatedString):
                self._calc_cache = _TabCalc(self)
            elif self.has_density:
                self._calc_cache = _GridCalc(self)
            else:
                raise ParameterError(
                    f"{type(self).__name__} supports no G-calculus backend")
        return self._calc_cache


class PowerString(String):
    """m(x) = -coef * x^(-theta) with 0 < theta < 1 (tail-finite)."""

    finite_tail = True
    has_density = True

    def __init__(self, theta, coef=1.0):
        if not 0.0 < theta < 1.0:
            raise ParameterError(
                f"power string needs 0 < theta < 1 so that int x dm is "
                f"finite near 0; got theta = {theta}")
        if coef <= 0.0:
            raise ParameterError(f"coef must be positive, got {coef}")
        self.theta = float(theta)
        self.coef = float(coef)

    def value(self, x):
        x = _check_positive(x)
        return -self.coef * x**-self.theta

    def tail(self, x):
        x = _check_positive(x)
        return self.coef * x**-self.theta

    def density(self, x):
        x = _check_positive(x)
        return self.coef * self.theta * x**(-self.theta - 1.0)

    def m_zero_finite(self):
        return False

    def x_dm_below(self, x):
        x = np.asarray(x, dtype=float)
        return self.coef * self.theta / (1.0 - self.theta) * x**(1.0 - self.theta)

    def G(self, x):
        x = np.asarray(x, dtype=float)
        return -self.coef / (1.0 - self.theta) * x**(1.0 - self.theta)

    def scaled(self, value_scale, arg_scale):
        return PowerString(self.theta,
                           self.coef * value_scale * arg_scale**-self.theta)

    def _plp_pair(self):
        m_tilde = (PowerLogPoly.term(-self.coef, -self.theta)
                   + PowerLogPoly.term(self.coef, 0.0))
        dens = PowerLogPoly.term(self.coef * self.theta, -self.theta - 1.0)
        return m_tilde, dens

    def _mono_density(self):
        """(coef, exponent) of the density, unrounded."""
        return self.coef * self.theta, -self.theta - 1.0

    def __repr__(self):
        return f"PowerString(theta={self.theta}, coef={self.coef})"


class LebesgueString(String):
    """m with constant density rho (dm = rho dx), pinned to m(1) = -1.

    The tail is infinite, so only the measure side (dm) is meaningful for
    most quantities; value() follows the m(1) = -1 representative unless an
    explicit offset is given (scaling transforms produce those).
    """

    finite_tail = False
    has_density = True

    def __init__(self, rho=1.0, offset=None):
        if rho <= 0.0:
            raise ParameterError(f"density must be positive, got {rho}")
        self.rho = float(rho)
        self.offset = float(offset) if offset is not None else -self.rho - 1.0

    def value(self, x):
        x = _check_positive(x)
        return self.rho * x + self.offset

    def tail(self, x):
        raise DivergenceError("constant-density string has infinite tail mass")

    def density(self, x):
        x = _check_positive(x)
        return np.full_like(x, self.rho)

    def m_zero_finite(self):
        return True

    def x_dm_below(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.rho * x**2

    def G(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.rho * x**2 + self.offset * x

    def scaled(self, value_scale, arg_scale):
        return LebesgueString(self.rho * value_scale * arg_scale,
                              offset=value_scale * self.offset)

    def _plp_pair(self):
        m_tilde = (PowerLogPoly.term(self.rho, 1.0)
                   + PowerLogPoly.term(-self.rho, 0.0))
        return m_tilde, PowerLogPoly.term(self.rho, 0.0)

    def _mono_density(self):
        return self.rho, 0.0

    def __repr__(self):
        return f"LebesgueString(rho={self.rho})"


class CallableDensityString(String):
    """m with a user-supplied density; everything runs on the grid backend.

    value() integrates the density from 1 under the m(1) = -1 pin, so the
    density must be integrable on (0, 1] for m(0+) to be reported finite.
    """

    finite_tail = False
    has_density = True

    def __init__(self, rho, finite_near_zero=None):
        self.rho = rho
        self._finite_near_zero = finite_near_zero

    def value(self, x):
        x = _check_positive(x)
        scalar = x.ndim == 0
        xs = np.atleast_1d(x)
        out = np.empty_like(xs)
        for i, xi in enumerate(xs):
            if xi == 1.0:
                out[i] = -1.0
            elif xi > 1.0:
                out[i] = -1.0 + integrate(self.rho, 1.0, float(xi))
            else:
                out[i] = -1.0 - integrate(self.rho, float(xi), 1.0)
        return float(out[0]) if scalar else out

    def tail(self, x):
        raise DivergenceError("callable-density strings are treated as "
                              "infinite-tail; no m(x, inf) available")

    def density(self, x):
        x = _check_positive(x)
        return np.asarray(self.rho(x), dtype=float)

    def m_zero_finite(self):
        if self._finite_near_zero is None:
            res = classify_zero_integral(self.rho, 1.0)
            self._finite_near_zero = res.convergent
        return self._finite_near_zero

    def x_dm_below(self, x):
        return integrate_zero_singular(
            lambda y: y * np.asarray(self.rho(y)), float(x)).value

    def G(self, x):
        return self.calc().G_k_eval(1, x) + self.value(1.0) * np.asarray(x, float)

    def __repr__(self):
        return f"CallableDensityString({self.rho!r})"


class TabulatedString(String):
    """Right-continuous step string from (x_i, m_i) pairs, values verbatim.

    dm is the sum of atoms at the breakpoints; below the first breakpoint the
    value is ``base`` (default m_0, i.e. no atom at x_0 unless base is given).
    """

    finite_tail = True
    has_density = False

    def __init__(self, points, base=None):
        pts = sorted((float(x), float(m)) for x, m in points)
        if not pts:
            raise ParameterError("tabulated string needs at least one point")
        self.xs = np.array([p[0] for p in pts])
        self.ms = np.array([p[1] for p in pts])
        if np.any(self.xs <= 0.0):
            raise ParameterError("breakpoints must be positive")
        if np.any(np.diff(self.xs) == 0.0):
            raise ParameterError("breakpoints must be distinct")
        if np.any(np.diff(self.ms) < 0.0):
            raise ParameterError("values must be non-decreasing")
        self.base = float(base) if base is not None else float(self.ms[0])
        if self.base > self.ms[0]:
            raise ParameterError("base value exceeds the first tabulated value")

    def atoms(self):
        masses = np.diff(np.concatenate(([self.base], self.ms)))
        keep = masses > 0.0
        return self.xs[keep], masses[keep]

    def value(self, x):
        x = _check_positive(x)
        idx = np.searchsorted(self.xs, x, side="right")
        vals = np.concatenate(([self.base], self.ms))[idx]
        return float(vals) if np.ndim(x) == 0 else vals

    def tail(self, x):
        # mass of (x, inf); the last tabulated value plays the role of m(inf)
        return self.ms[-1] - self.value(x)

    def m_zero_finite(self):
        return True

    def x_dm_below(self, x):
        xs, ws = self.atoms()
        x = np.asarray(x, dtype=float)
        inc = np.where(xs[None, :] <= np.atleast_1d(x)[:, None], xs * ws, 0.0)
        out = inc.sum(axis=1)
        return float(out[0]) if x.ndim == 0 else out

    def G(self, x):
        return self.calc().G_m_eval(x)

    def scaled(self, value_scale, arg_scale):
        pts = [(x / arg_scale, value_scale * m)
               for x, m in zip(self.xs, self.ms)]
        return TabulatedString(pts, base=value_scale * self.base)

    def __repr__(self):
        return f"TabulatedString({list(zip(self.xs, self.ms))!r})"


class ScaledString(String):
    """Generic x -> value_scale * m(arg_scale * x) wrapper.

    Families with closed forms override scaled() and never use this class;
    it exists for callable-density strings.
    """

    def __init__(self, base, value_scale, arg_scale):
        if value_scale <= 0 or arg_scale <= 0:
            raise ParameterError("scales must be positive")
        self.base = base
        self.cv = float(value_scale)
        self.ca = float(arg_scale)
        self.finite_tail = base.finite_tail
        self.has_density = base.has_density

    def value(self, x):
        return self.cv * self.base.value(self.ca * np.asarray(x, float))

    def tail(self, x):
        return self.cv * self.base.tail(self.ca * np.asarray(x, float))

    def density(self, x):
        return self.cv * self.ca * self.base.density(self.ca * np.asarray(x, float))

    def m_zero_finite(self):
        return self.base.m_zero_finite()

    def x_dm_below(self, x):
        return (self.cv / self.ca) * self.base.x_dm_below(self.ca * np.asarray(x, float))

    def G(self, x):
        return (self.cv / self.ca) * self.base.G(self.ca * np.asarray(x, float))

    def scaled(self, value_scale, arg_scale):
        return ScaledString(self.base, self.cv * value_scale, self.ca * arg_scale)

    def __repr__(self):
        return f"ScaledString({self.base!r}, cv={self.cv}, ca={self.ca})"


def eval_m(spec: String, x):
    """m(x) under the spec's normalization."""
    return spec.value(x)


# ---------------------------------------------------------------------------
# jump measures


class JumpMeasure:
    """Jumping-in measure j on (0, inf), given by density and tail."""

    near_zero_exponent = None  # density ~ c x^e as x -> 0, when known
    L_sv = None                # slowly varying tail part, when known

    def density(self, x):
        raise NotImplementedError

    def tail(self, x):
        """j(x, inf)."""
        raise NotImplementedError

    def breakpoints(self):
        """Points where the density is not smooth, for quadrature splitting."""
        return ()

    def scaled(self, mass_scale, arg_scale):
        return ScaledJump(self, mass_scale, arg_scale)


class PiecewisePowerJump(JumpMeasure):
    """Density c_in * x^e_in on (0, split], c_out * x^e_out beyond.

    e_out < -1 keeps the total tail mass finite; e_in <= -1 gives the
    infinite near-zero mass required of jumping-in measures.
    """

    def __init__(self, inner_coef, inner_exp, outer_coef, outer_exp, split=1.0):
        if outer_exp >= -1.0:
            raise ParameterError(
                f"outer exponent must be < -1 for a finite tail, got {outer_exp}")
        if inner_coef < 0 or outer_coef < 0 or split <= 0:
            raise ParameterError("coefficients must be >= 0 and split > 0")
        self.ci, self.ei = float(inner_coef), float(inner_exp)
        self.co, self.eo = float(outer_coef), float(outer_exp)
        self.split = float(split)
        self.near_zero_exponent = self.ei

    def density(self, x):
        arr = _check_positive(x)
        xs = np.atleast_1d(arr)
        out = np.empty_like(xs)
        lo = xs <= self.split
        out[lo] = self.ci * xs[lo] ** self.ei
        out[~lo] = self.co * xs[~lo] ** self.eo
        return float(out[0]) if arr.ndim == 0 else out

    def tail(self, x):
        x = _check_positive(x)
        x = np.asarray(x, dtype=float)
        above = -self.co * np.maximum(x, self.split)**(self.eo + 1.0) / (self.eo + 1.0)
        if self.ei == -1.0:
            inner = self.ci * np.log(self.split / np.minimum(x, self.split))
        else:
            inner = self.ci * (self.split**(self.ei + 1.0)
                               - np.minimum(x, self.split)**(self.ei + 1.0)) / (self.ei + 1.0)
        out = above + inner
        return float(out) if out.ndim == 0 else out

    def breakpoints(self):
        return (self.split,)

    def scaled(self, mass_scale, arg_scale):
        # mass_scale * j(arg_scale * x, .): stays piecewise power
        return PiecewisePowerJump(
            mass_scale * arg_scale**(self.ei + 1.0) * self.ci, self.ei,
            mass_scale * arg_scale**(self.eo + 1.0) * self.co, self.eo,
            split=self.split / arg_scale)

    def __repr__(self):
        return (f"PiecewisePowerJump({self.ci}*x^{self.ei} on (0,{self.split}], "
                f"{self.co}*x^{self.eo} beyond)")


class ScaledJump(JumpMeasure):
    """mass_scale * j(arg_scale * x, .) for a generic base measure."""

    def __init__(self, base, mass_scale, arg_scale):
        if mass_scale <= 0 or arg_scale <= 0:
            raise ParameterError("scales must be positive")
        self.base = base
        self.cm = float(mass_scale)
        self.ca = float(arg_scale)
        self.near_zero_exponent = base.near_zero_exponent

    def density(self, x):
        return self.cm * self.ca * self.base.density(self.ca * np.asarray(x, float))

    def tail(self, x):
        return self.cm * self.base.tail(self.ca * np.asarray(x, float))

    def breakpoints(self):
        return tuple(b / self.ca for b in self.base.breakpoints())

    def scaled(self, mass_scale, arg_scale):
        return ScaledJump(self.base, self.cm * mass_scale, self.ca * arg_scale)


# ---------------------------------------------------------------------------
# calculus backends


class _PolyCalc:
    """Exact G^k machinery for strings with power-log-polynomial calculus."""

    def __init__(self, string, m_tilde, density):
        self.string = string
        self.m_tilde = m_tilde
        self.density = density
        self._gk = {1: m_tilde.integral_from_zero()}

    def G_k(self, k):
        if k < 1:
            raise ParameterError(f"k must be >= 1, got {k}")
        kk = max(self._gk)
        while kk < k:
            inner = (self._gk[kk] * self.density).integral_to_ref(1.0)
            self._gk[kk + 1] = -(inner.integral_from_zero())
            kk += 1
        return self._gk[k]

    def G_k_eval(self, k, x):
        return self.G_k(k)(np.asarray(x, dtype=float))

    def int_Gk_dm_01(self, k):
        """int_0^1 G^k dm, exact; DivergenceError at or past the d(m) boundary."""
        integrand = self.G_k(k) * self.density
        if integrand.min_exponent() <= -1.0 + 1e-9:
            raise DivergenceError(
                f"int_0^1 G^{k} dm diverges (exponent "
                f"{integrand.min_exponent():.6g} at 0)")
        return integrand.integral_from_zero().value_at_one()

    def dyadic_integrand(self, k):
        poly = self.G_k(k) * self.density
        sign = (-1.0) ** k
        return lambda x: sign * poly(x)


class _PiecewiseLinear:
    """Piecewise-linear function with constant-slope extension on both sides."""

    def __init__(self, knots, vals, slope_lo, slope_hi):
        self.knots = np.asarray(knots, dtype=float)
        self.vals = np.asarray(vals, dtype=float)
        self.slope_lo = float(slope_lo)
        self.slope_hi = float(slope_hi)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.interp(x, self.knots, self.vals)
        out = np.where(x < self.knots[0],
                       self.vals[0] - (self.knots[0] - x) * self.slope_lo, out)
        out = np.where(x > self.knots[-1],
                       self.vals[-1] + (x - self.knots[-1]) * self.slope_hi, out)
        return float(out) if out.ndim == 0 else out


class _TabCalc:
    """Exact piecewise-linear G^k recursion on a tabulated string's atoms."""

    def __init__(self, string):
        self.string = string
        self.ts, self.ws = string.atoms()
        self._gk = {}

    def _integrate_step(self, seg_starts, seg_vals):
        """Piecewise-linear x -> int_0^x of a step function.

        seg_vals[i] is the integrand's value on [seg_starts[i], seg_starts[i+1]),
        the last value extending to infinity; seg_starts[0] must be 0.
        """
        widths = np.diff(seg_starts)
        vals = np.concatenate(([0.0], np.cumsum(seg_vals[:-1] * widths)))
        return _PiecewiseLinear(seg_starts, vals, seg_vals[0], seg_vals[-1])

    def G_m_eval(self, x):
        # m itself is a step function: base below the first breakpoint
        starts = np.concatenate(([0.0], self.string.xs))
        vals = np.concatenate(([self.string.base], self.string.ms))
        pl = self._integrate_step(starts, vals)
        return pl(x)

    def _A_values(self, g):
        """A(y) = int_y^1 g dm (signed beyond 1) on each atom segment.

        A is a right-continuous step with jumps exactly at the atoms, so its
        value on [t_i, t_{i+1}) is the atom sum over (t_i, 1].
        """
        contrib = np.asarray(g(self.ts), dtype=float) * self.ws
        starts = np.concatenate(([0.0], self.ts))
        out = np.empty(len(starts))
        for i, s in enumerate(starts):
            if s < 1.0:
                out[i] = contrib[(self.ts > s) & (self.ts <= 1.0)].sum()
            else:
                out[i] = -contrib[(self.ts > 1.0) & (self.ts <= s)].sum()
        return starts, out

    def G_k(self, k):
        if 1 not in self._gk:
            m1 = self.string.value(1.0)
            starts = np.concatenate(([0.0], self.string.xs))
            vals = np.concatenate(([self.string.base], self.string.ms)) - m1
            self._gk[1] = self._integrate_step(starts, vals)
        kk = max(self._gk)
        while kk < k:
            starts, avals = self._A_values(self._gk[kk])
            pl = self._integrate_step(starts, -avals)
            self._gk[kk + 1] = pl
            kk += 1
        return self._gk[k]

    def G_k_eval(self, k, x):
        return self.G_k(k)(x)

    def int_Gk_dm_01(self, k):
        g = self.G_k(k)
        sel = self.ts <= 1.0
        return float((np.asarray(g(self.ts[sel])) * self.ws[sel]).sum())


class _GridCalc:
    """Dense log-grid backend for strings that only expose a density."""

    X_MIN = 1e-14

    def __init__(self, string, x_max=32.0, per_decade=240):
        self.string = string
        self.per_decade = per_decade
        self._build(x_max)
        self._gk = {}

    def _build(self, x_max):
        lo_dec = int(np.floor(np.log10(self.X_MIN)))
        hi_dec = int(np.ceil(np.log10(x_max)))
        n = (hi_dec - lo_dec) * self.per_decade + 1
        self.xs = np.logspace(lo_dec, hi_dec, n)
        self.x_max = self.xs[-1]
        self.rho = np.asarray(self.string.density(self.xs), dtype=float)
        self.i_one = int(np.argmin(np.abs(self.xs - 1.0)))
        self._gk = {}

    def ensure_range(self, x_max):
        if x_max > self.x_max:
            self._build(x_max * 2.0)

    @staticmethod
    def _head(xs, vals):
        """int_0^{xs[0]} of a power-like tabulated integrand."""
        v0, v1 = vals[0], vals[min(8, len(vals) - 1)]
        if v0 == 0.0 or v1 == 0.0 or np.sign(v0) != np.sign(v1):
            return 0.0
        p = np.log(abs(v1 / v0)) / np.log(xs[min(8, len(xs) - 1)] / xs[0])
        if p <= -1.0:
            raise DivergenceError(
                f"grid head extrapolation sees exponent {p:.3f} <= -1 at 0")
        return vals[0] * xs[0] / (p + 1.0)

    def cum_from_zero(self, vals):
        head = self._head(self.xs, vals)
        return head + np.concatenate(
            ([0.0], cumulative_simpson(vals, x=self.xs)))

    def _interpolant(self, vals):
        pch = PchipInterpolator(np.log(self.xs), vals, extrapolate=False)
        xs0, v0 = self.xs[0], vals[0]
        v1 = vals[8]
        if v0 != 0.0 and v1 != 0.0 and np.sign(v0) == np.sign(v1):
            p = np.log(abs(v1 / v0)) / np.log(self.xs[8] / xs0)
        else:
            p = 1.0

        def f(x, pch=pch, xs0=xs0, v0=v0, p=p, hi=self.x_max):
            x = np.asarray(x, dtype=float)
            out = np.where(x < xs0, v0 * (x / xs0) ** p,
                           pch(np.log(np.maximum(x, xs0))))
            if np.any(x > hi * (1 + 1e-12)):
                raise DomainError(f"grid backend covers x <= {hi:g}")
            return float(out) if out.ndim == 0 else out

        return f

    def G_k(self, k):
        if 1 not in self._gk:
            m_tilde = (np.asarray(self.string.value(self.xs), dtype=float)
                       - self.string.value(1.0))
            self._gk[1] = self.cum_from_zero(m_tilde)
        kk = max(self._gk)
        while kk < k:
            integrand = self._gk[kk] * self.rho
            cum = np.concatenate(([0.0], cumulative_simpson(integrand, x=self.xs)))
            A = cum[self.i_one] - cum  # int_y^1 G^k dm on the grid
            self._gk[kk + 1] = -self.cum_from_zero(A)
            kk += 1
        return self._gk[k]

    def G_k_eval(self, k, x):
        x = np.asarray(x, dtype=float)
        self.ensure_range(float(np.max(x)) if x.size else 1.0)
        return self._interpolant(self.G_k(k))(x)

    def int_Gk_dm_01(self, k):
        vals = self.G_k(k) * self.rho
        return integrate_zero_singular(self._interpolant(vals), 1.0).value

    def dyadic_integrand(self, k):
        table = self.G_k(k)
        interp = self._interpolant(table)
        sign = (-1.0) ** k

        def f(x):
            return sign * interp(np.asarray(x, float)) * self.string.density(x)

        return f


# ---------------------------------------------------------------------------
# public operations


def stieltjes_integral(f, a, b, spec: String, rel_tol=1e-10):
    """int_a^b f dm over (a, b], atoms handled exactly.

    b may be inf for finite-tail densities; refinement failures raise
    NonConvergenceError from the quadrature layer.
    """
    if not 0.0 <= a < b:
        raise ParameterError(f"need 0 <= a < b, got ({a}, {b})")
    if isinstance(spec, TabulatedString):
        xs, ws = spec.atoms()
        sel = (xs > a) & (xs <= b)
        return float(np.sum(np.asarray(f(xs[sel]), dtype=float) * ws[sel])) \
            if np.any(sel) else 0.0
    if not spec.has_density:
        raise ParameterError(f"{type(spec).__name__} has neither density nor atoms")

    def integrand(x):
        return np.asarray(f(x), dtype=float) * spec.density(x)

    total = 0.0
    lo = a
    if a == 0.0:
        cut = min(1.0, b)
        total += integrate_zero_singular(integrand, cut, rel_tol=rel_tol).value
        lo = cut
    if b == np.inf:
        if lo == 0.0:
            raise ParameterError("integral over all of (0, inf): split it")
        total += integrate_upper_tail(integrand, lo, rel_tol=rel_tol).value
    elif b > lo:
        total += integrate(integrand, lo, b, rel_tol=rel_tol)
    return total


def G_m(spec: String, x):
    """G_m(x) = int_0^x m(y) dy; G_m(0) = 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0):
        raise DomainError(f"x must be >= 0, got {x}")
    out = np.where(x > 0.0, spec.G(np.maximum(x, 1e-300)), 0.0)
    return float(out) if out.ndim == 0 else out


def G_k(spec: String, k: int, x):
    """The iterated integral G^k_m; k = 1 uses m - m(1), higher k recurse
    through int_y^1 G^{k-1} dm.  Exact for power/affine/tabulated strings."""
    if k < 1:
        raise ParameterError(f"k must be a positive integer, got {k}")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0):
        raise DomainError(f"x must be >= 0, got {x}")
    out = np.where(x > 0.0,
                   spec.calc().G_k_eval(k, np.maximum(x, 1e-300)), 0.0)
    return float(out) if out.ndim == 0 else out


def d_of_m(spec: String, d_max=8):
    """Singularity index: smallest k with int_0^1 (-1)^k G^k dm finite.

    Returns 0 when m(0+) is finite, an integer k <= d_max otherwise, or None
    when every k up to d_max is certified divergent.  Dyadic partial
    integrals decide convergence; IndeterminacyError propagates when they
    cannot.  Strings within a few percent of a boundary case (near-unit
    per-dyad decay) may exhaust the dyad budget instead of answering.
    """
    if spec.m_zero_finite():
        return 0
    calc = spec.calc()
    for k in range(1, d_max + 1):
        res = classify_zero_integral(calc.dyadic_integrand(k), 1.0)
        if res.convergent:
            return k
    return None


def check_x_dm_finite(spec: String):
    """Classify int_{0+} x dm by dyadic partials (a type invariant)."""
    if isinstance(spec, TabulatedString):
        return True
    res = classify_zero_integral(lambda x: x * spec.density(x), 1.0)
    return res.convergent


class ConditionCReport:
    """Verdict and witnesses for the admissibility of (m, j)."""

    def __init__(self, holds, tail_mass, x_moment, g_moment, infinite_near_zero):
        self.holds = holds
        self.tail_mass = tail_mass
        self.x_moment = x_moment
        self.g_moment = g_moment
        self.infinite_near_zero = infinite_near_zero

    @property
    def witnesses(self):
        return {"j(1,inf)": self.tail_mass, "int_0^1 x dj": self.x_moment,
                "int_0^1 |G_m| dj": self.g_moment}

    def __repr__(self):
        return (f"ConditionCReport(holds={self.holds}, "
                f"witnesses={self.witnesses}, "
                f"infinite_near_zero={self.infinite_near_zero})")


def _near_zero_infinite(j: JumpMeasure):
    """j(0,1) = inf?  Exponent inspection when available, dyadic otherwise;
    when both run they must agree."""
    res = classify_zero_integral(j.density, 1.0)
    by_quad = not res.convergent
    e = j.near_zero_exponent
    if e is not None:
        by_exp = e <= -1.0
        if by_exp != by_quad:
            raise ConditioningError(
                f"near-zero exponent {e} and dyadic classification "
                f"({res.status}) disagree about j(0,1)")
        return by_exp
    return by_quad


def check_condition_C(m: String, j: JumpMeasure):
    """Admissibility of the pair: j(1,inf) + int_0^1 x dj + int_0^1 |G_m| dj
    finite, and j(0,1) infinite.  Witness integrals are reported either way."""
    infinite_near_zero = _near_zero_infinite(j)
    tail_mass = float(j.tail(1.0))

    res_x = classify_zero_integral(lambda x: x * j.density(x), 1.0)
    x_moment = res_x.value if res_x.convergent else np.inf

    def g_integrand(x):
        return np.abs(G_m(m, x)) * j.density(x)

    res_g = classify_zero_integral(g_integrand, 1.0)
    g_moment = res_g.value if res_g.convergent else np.inf

    holds = (infinite_near_zero and np.isfinite(tail_mass)
             and np.isfinite(x_moment) and np.isfinite(g_moment))
    return ConditionCReport(holds, tail_mass, x_moment, g_moment,
                            infinite_near_zero)


def N_of_gamma(m: String, j: JumpMeasure, gamma, rel_tol=1e-9):
    """The nested quantity
    N(gamma) = int_0^gamma j(dx) int_0^x dy int_y^gamma dm(z) int_0^z m(w,inf) dw.

    Needs a finite string tail.  For power-family strings the three inner
    layers are exact power-log polynomials and only the j-integral is
    numeric.
    """
    gamma = float(gamma)
    if gamma <= 0.0:
        return 0.0
    if not m.finite_tail:
        raise DivergenceError("N(gamma) needs a string with finite tail mass")

    P = _inner_P(m, gamma)

    def integrand(x):
        return P(x) * j.density(x)

    total = 0.0
    cut = min(1.0, gamma)
    total += integrate_zero_singular(integrand, cut, rel_tol=rel_tol).value
    if gamma > cut:
        # split at density kinks; a Gauss panel across one loses digits
        edges = ([cut] + sorted(b for b in j.breakpoints() if cut < b < gamma)
                 + [gamma])
        for lo, hi in zip(edges[:-1], edges[1:]):
            total += integrate(integrand, lo, hi, rel_tol=rel_tol)
    return total


def _inner_P(m: String, gamma):
    """x -> int_0^x dy int_y^gamma dm(z) int_0^z m(w,inf) dw."""
    pair = m._plp_pair()
    if pair is not None and m.finite_tail:
        m_tilde, dens = pair
        # m(inf) = 0 convention: int_0^z tail = -G(z)
        negG = -(m_tilde.integral_from_zero()
                 + PowerLogPoly.term(m.value(1.0), 1.0))
        R = (negG * dens).integral_to_ref(gamma)
        return R.integral_from_zero()
    if isinstance(m, TabulatedString):
        ts, ws = m.atoms()
        negG_at = -np.asarray(G_m(m, ts))

        def P_tab(x):
            x = np.atleast_1d(np.asarray(x, dtype=float))
            out = np.empty_like(x)
            for i, xi in enumerate(x):
                # R(y) = sum over atoms in (y, gamma]; piecewise-constant,
                # so P is a sum of exactly integrable pieces
                pts = np.concatenate(([0.0], np.sort(ts[ts <= xi]), [xi]))
                acc = 0.0
                for a, b in zip(pts[:-1], pts[1:]):
                    if b <= a:
                        continue
                    mid = 0.5 * (a + b)
                    sel = (ts > mid) & (ts <= gamma)
                    acc += (negG_at[sel] * ws[sel]).sum() * (b - a)
                out[i] = acc
            return out
        return P_tab
    # generic density backend
    calc = m.calc()
    if not isinstance(calc, _GridCalc):
        calc = _GridCalc(m)
    calc.ensure_range(gamma)
    negG = -np.asarray(m.G(calc.xs), dtype=float)
    cum = np.concatenate(([0.0], cumulative_simpson(negG * calc.rho, x=calc.xs)))
    i_hi = int(np.searchsorted(calc.xs, gamma, side="right")) - 1
    # gamma rarely sits on a node; integrate the short stub up to it exactly
    stub = 0.0
    if gamma > calc.xs[i_hi] * (1 + 1e-12):
        stub = integrate(
            lambda w: -np.asarray(m.G(w)) * np.asarray(m.density(w)),
            float(calc.xs[i_hi]), gamma)
    R = cum[i_hi] + stub - cum
    P = calc.cum_from_zero(R)
    return calc._interpolant(P)


def F_M_quantities(m: String, gamma, alpha, K=None):
    """F(gamma) = int_0^gamma x dm, plus the asymptotic surrogate for M.

    The surrogate gamma^{(n+1-alpha)/alpha} K(gamma)^{n+1} with
    n = floor(alpha) - 1 is a proportionality diagnostic only, and is
    flagged as such in the result.
    """
    gamma = float(gamma)
    if gamma < 1.0:
        raise ParameterError(f"gamma must be >= 1, got {gamma}")
    n = int(np.floor(alpha)) - 1
    exponent = (n + 1 - alpha) / alpha
    kval = 1.0 if K is None else float(K(gamma))
    return {
        "F": float(m.x_dm_below(gamma)),
        "M_surrogate": gamma**exponent * kval ** (n + 1),
        "M_exponent": exponent,
        "M_terms": n + 1,
        "asymptotic_only": True,
    }
