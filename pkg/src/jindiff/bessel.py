"""Power-log drift families and the strings they induce on natural scale.

A diffusion on (0, inf) whose scale derivative is 1/W for

    W(x) = exp(eta_bar) x^(delta - 1) l(x),        delta < 0,
    l(x) = (log x / log x0)^(s - 1)  above x0,  l = 1 below,

hits zero, and in the scale coordinate xi = stilde(x) = int_0^x dy/W(y) its
speed measure becomes a string m(xi) = mtilde(stilde^-1(xi)) with
mtilde(x) = 2 int W.  Both maps are power-log: stilde grows like
x^(2 alpha) / (2 alpha C l(x)) and the speed tail 2 int_x^inf W decays like
C l(x) x^(2 - 2 alpha) / (alpha - 1), where C = exp(eta_bar) and

    alpha = 1 - delta / 2.

Eliminating x gives a regularly varying string tail of index 1/alpha - 1,

    m(xi, inf) ~ (alpha - 1)^-1 kappa0 (log xi)^((s-1)/alpha) xi^(1/alpha - 1),
    kappa0 = C^(1/alpha) (2 alpha)^(1/alpha - 1) (2 alpha log x0)^((1-s)/alpha).

natural_scale_string divides the string by kappa0 so the slowly varying tail
part is exactly (log xi)^((s-1)/alpha) with unit constant, and reports the
removed factor as ``.calibration``.  For s = 1 both maps are pure powers and
the string comes back in closed form.

The companion jump family takes the lighter of two power branches,

    density(x) = (2/alpha) min(x^(-a-1), (log x)^(t-1) x^(-2/alpha-1)),

with the inner branch alone below 1, where the log factor has no meaning.
The 2/alpha prefactor makes the tail constant exactly one:

    j(x, inf) ~ x^(-2/alpha) (log x)^(t-1)        (x -> inf),

with equality from the crossover on when t = 1.  N_asymptotic_constant gives
the constant in front of (log gamma)^(2(s-1)/alpha + t) in the nested mean
N(gamma) that this pair induces, and suggested_uv builds the normalizer pair
(u, v) under which the recentered Laplace exponent of the rescaled family
tends to -lam^2 with unit constant.
"""

import math

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq
from scipy.special import gammaincc

from .errors import DomainError, NonConvergenceError, ParameterError
from .levy import ConstantSV, LogPowerSV, ScalingFamily
from .measure import (JumpMeasure, PiecewisePowerJump, PowerString, String,
                      _check_positive)
from .quadrature import integrate, integrate_upper_tail, panel_values


class BesselDriftSpec:
    """Drift data: exponent delta < 0, log-perturbation strength s, anchor x0.

    The induced string tail index is alpha = 1 - delta/2 > 1, the exponent
    balance between the scale map (~ x^(2 alpha)) and the speed tail
    (~ x^(2 - 2 alpha)).  s = 1 switches the perturbation off; s != 1
    multiplies the drift by (log x / log x0)^(s-1) from the anchor on.
    eta_bar folds a convergent drift-integral remainder into a constant
    factor exp(eta_bar) on W.
    """

    def __init__(self, delta, s=1.0, x0=math.e, eta_bar=0.0):
        if not delta < 0.0:
            raise ParameterError(
                f"drift exponent must be negative so paths reach zero and "
                f"the scale map covers (0, inf); got delta = {delta}")
        if not x0 > 1.0:
            raise ParameterError(
                f"anchor must exceed 1 so log x0 > 0, got x0 = {x0}")
        self.delta = float(delta)
        self.s = float(s)
        self.x0 = float(x0)
        self.eta_bar = float(eta_bar)

    @property
    def alpha(self):
        return 1.0 - 0.5 * self.delta

    @classmethod
    def from_alpha(cls, alpha, s=1.0, x0=math.e, eta_bar=0.0):
        """The spec whose induced string has tail index alpha > 1."""
        if not alpha > 1.0:
            raise ParameterError(
                f"tail index must exceed 1, got alpha = {alpha}")
        return cls(2.0 - 2.0 * alpha, s=s, x0=x0, eta_bar=eta_bar)

    def __repr__(self):
        return (f"BesselDriftSpec(delta={self.delta}, s={self.s}, "
                f"x0={self.x0}, eta_bar={self.eta_bar})")


def drift_W(spec: BesselDriftSpec, x):
    """W(x) = exp(eta_bar) x^(delta-1) l(x), the reciprocal scale density.

    l is spliced to 1 below the anchor, so the pure power extends over all
    of (0, x0] and the log factor only acts where log x / log x0 >= 1.
    """
    arr = _check_positive(x)
    xs = np.atleast_1d(np.asarray(arr, dtype=float))
    out = xs ** (spec.delta - 1.0)
    if spec.s != 1.0:
        hi = xs > spec.x0
        if hi.any():
            out[hi] *= (np.log(xs[hi]) / math.log(spec.x0)) ** (spec.s - 1.0)
    if spec.eta_bar != 0.0:
        out = out * math.exp(spec.eta_bar)
    return float(out[0]) if arr.ndim == 0 else out


def calibration_constant(spec: BesselDriftSpec):
    """kappa0, the tail constant the raw natural-scale string carries."""
    alpha = spec.alpha
    two_a = 2.0 * alpha
    out = two_a ** (1.0 / alpha - 1.0) * math.exp(spec.eta_bar / alpha)
    if spec.s != 1.0:
        out *= (two_a * math.log(spec.x0)) ** ((1.0 - spec.s) / alpha)
    return out


def natural_scale_string(spec: BesselDriftSpec, xi_max=1e13):
    """The speed string of the drift in scale coordinates, tail-calibrated.

    The result is the raw induced string divided by kappa0, so its tail
    satisfies

        m(xi, inf) (alpha - 1) xi^(1 - 1/alpha) -> (log xi)^((s-1)/alpha)

    with unit constant; the removed factor is reported as ``.calibration``
    and the slowly varying part is attached as ``.K_sv``.  For s = 1 the
    string is an exact power; otherwise the scale map is inverted
    numerically on a ladder prepared up to ``xi_max``.
    """
    alpha = spec.alpha
    if spec.s == 1.0:
        out = PowerString(1.0 - 1.0 / alpha, 1.0 / (alpha - 1.0))
        out.K_sv = ConstantSV(1.0)
    else:
        out = _NaturalScaleString(spec, xi_max=xi_max)
        out.K_sv = LogPowerSV((spec.s - 1.0) / alpha)
    out.alpha = alpha
    out.calibration = calibration_constant(spec)
    out.drift = spec
    return out


_NODES_PER_OCTAVE = 8


class _NaturalScaleString(String):
    """String induced by a log-perturbed drift, carried on a panel ladder.

    The scale map stilde and the speed accumulation mtilde are exact closed
    forms below the anchor, where the drift is a pure power; above it both
    run on a shared log grid of Gauss panels, and point queries close the
    gap from the nearest node with one extra panel, so values come from
    quadrature rather than interpolation.  The interpolant only seeds the
    Newton inversion of stilde.  Built eagerly; immutable afterwards.
    """

    finite_tail = True
    has_density = True

    def __init__(self, spec: BesselDriftSpec, xi_max=1e13):
        self.spec = spec
        self.alpha = spec.alpha
        self._kappa0 = calibration_constant(spec)
        self._C = math.exp(spec.eta_bar)

        w = lambda ys: drift_W(spec, ys)
        inv_w = lambda ys: 1.0 / drift_W(spec, ys)
        two_a = 2.0 * self.alpha
        xs = [spec.x0]
        S = [spec.x0 ** two_a / (two_a * self._C)]
        M = [0.0]  # mtilde relative to the anchor; tails only use differences
        ratio = 2.0 ** (1.0 / _NODES_PER_OCTAVE)
        lo = spec.x0
        for _ in range(600):
            edges = lo * ratio ** np.arange(_NODES_PER_OCTAVE + 1.0)
            S.extend((S[-1] + np.cumsum(panel_values(inv_w, edges))).tolist())
            M.extend((M[-1]
                      + 2.0 * np.cumsum(panel_values(w, edges))).tolist())
            xs.extend(edges[1:].tolist())
            lo = float(edges[-1])
            if S[-1] >= xi_max:
                break
        else:
            raise NonConvergenceError(
                f"scale map did not reach xi_max = {xi_max:g} within 600 "
                f"octaves above the anchor x0 = {spec.x0:g}")
        self._xs = np.asarray(xs)
        self._S = np.asarray(S)
        self._M = np.asarray(M)
        self._m_inf = self._M[-1] + 2.0 * integrate_upper_tail(
            w, float(self._xs[-1]), rel_tol=1e-13, abs_tol=0.0).value
        self._seed = PchipInterpolator(np.log(self._S), np.log(self._xs))

    # -- drift-coordinate maps ------------------------------------------

    def scale_map(self, x):
        """stilde(x) = int_0^x dy / W(y)."""
        x = float(x)
        if x <= 0.0:
            raise DomainError(f"the scale map lives on (0, inf); got {x}")
        two_a = 2.0 * self.alpha
        if x <= self.spec.x0:
            return x ** two_a / (two_a * self._C)
        if x > self._xs[-1]:
            return self._S[-1] + integrate(
                lambda ys: 1.0 / drift_W(self.spec, ys),
                float(self._xs[-1]), x, rel_tol=1e-13)
        j = int(np.searchsorted(self._xs, x)) - 1
        j = max(j, 0)
        base = float(self._xs[j])
        if x == base:
            return float(self._S[j])
        part = panel_values(lambda ys: 1.0 / drift_W(self.spec, ys),
                            np.array([base, x]))[0]
        return float(self._S[j]) + float(part)

    def scale_inverse(self, xi):
        """x with stilde(x) = xi; bracketed Newton, bisection on overshoot."""
        xi = float(xi)
        if xi <= 0.0:
            raise DomainError(f"scale positions are positive, got {xi}")
        two_a = 2.0 * self.alpha
        if xi <= self._S[0]:
            return (two_a * self._C * xi) ** (1.0 / two_a)
        if xi > self._S[-1]:
            raise DomainError(
                f"scale position {xi:g} lies beyond the prepared ladder "
                f"(xi_max = {self._S[-1]:g}); rebuild with a larger xi_max")
        j = int(np.searchsorted(self._S, xi)) - 1
        lo, hi = float(self._xs[j]), float(self._xs[j + 1])
        x = min(max(float(math.exp(self._seed(math.log(xi)))), lo), hi)
        for _ in range(80):
            f = self.scale_map(x) - xi
            if abs(f) <= 1e-12 * xi:
                return x
            if f < 0.0:
                lo = x
            else:
                hi = x
            # d stilde / dx = 1 / W, so the Newton step is -f W
            step = x - f * drift_W(self.spec, x)
            x = step if lo < step < hi else 0.5 * (lo + hi)
        raise NonConvergenceError(
            f"scale-map inversion did not converge at xi = {xi:g}")

    def _mtilde(self, x):
        """2 int W, measured from the anchor."""
        if x <= self.spec.x0:
            d = self.spec.delta
            return -2.0 * self._C * (self.spec.x0 ** d - x ** d) / d
        j = int(np.searchsorted(self._xs, x)) - 1
        j = max(j, 0)
        base = float(self._xs[j])
        if x == base:
            return float(self._M[j])
        part = panel_values(lambda ys: drift_W(self.spec, ys),
                            np.array([base, x]))[0]
        return float(self._M[j]) + 2.0 * float(part)

    # -- string protocol -------------------------------------------------

    def value(self, x):
        out = -self.tail(x)
        return out

    def tail(self, x):
        arr = _check_positive(x)
        xs = np.atleast_1d(np.asarray(arr, dtype=float))
        out = np.array([self._m_inf - self._mtilde(self.scale_inverse(xi))
                        for xi in xs]) / self._kappa0
        return float(out[0]) if arr.ndim == 0 else out

    def density(self, x):
        arr = _check_positive(x)
        xs = np.atleast_1d(np.asarray(arr, dtype=float))
        # dm/dxi = (dmtilde/dx) / (dstilde/dx) = 2 W^2
        out = np.array([2.0 * drift_W(self.spec, self.scale_inverse(xi)) ** 2
                        for xi in xs]) / self._kappa0
        return float(out[0]) if arr.ndim == 0 else out

    def m_zero_finite(self):
        # tail grows like xi^(1/alpha - 1) at zero, so m(0+) = -inf
        return False

    def x_dm_below(self, x):
        X = self.scale_inverse(float(x))
        val = _integrate_from_zero(
            lambda ys: 2.0 * self._scale_vec(ys) * drift_W(self.spec, ys), X)
        return val / self._kappa0

    def G(self, x):
        arr = _check_positive(x)
        xs = np.atleast_1d(np.asarray(arr, dtype=float))
        out = np.array([self._G_one(float(xi)) for xi in xs])
        return float(out[0]) if arr.ndim == 0 else out

    def _G_one(self, xi):
        # G = int_0^xi m = -int_0^xi tail; in drift coordinates the tail is
        # mtilde(inf) - mtilde and dxi = dy / W
        X = self.scale_inverse(xi)
        val = _integrate_from_zero(
            lambda ys: (self._m_inf
                        - self._mtilde_vec(ys)) / drift_W(self.spec, ys), X)
        return -val / self._kappa0

    def _scale_vec(self, ys):
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        return np.array([self.scale_map(y) for y in ys])

    def _mtilde_vec(self, ys):
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        return np.array([self._mtilde(float(y)) for y in ys])

    def __repr__(self):
        return f"_NaturalScaleString({self.spec!r})"


def _integrate_from_zero(f, b, rel_tol=1e-11):
    """int_0^b f for integrands vanishing at 0 like a positive power."""
    from .quadrature import integrate_zero_singular
    return integrate_zero_singular(f, float(b), rel_tol=rel_tol,
                                   abs_tol=0.0).value


class BesselJumpSpec:
    """Jump-side parameters: inner singularity a in (0, 1/alpha), log power t."""

    def __init__(self, alpha, a, t=1.0):
        if not alpha > 1.0:
            raise ParameterError(
                f"the jump family pairs with strings of tail index "
                f"alpha > 1, got alpha = {alpha}")
        if not 0.0 < a < 1.0 / alpha:
            raise ParameterError(
                f"inner exponent must satisfy 0 < a < 1/alpha = "
                f"{1.0 / alpha:g}, got a = {a}")
        self.alpha = float(alpha)
        self.a = float(a)
        self.t = float(t)

    def measure(self):
        return example_jump_measure(self.alpha, self.a, self.t)

    def __repr__(self):
        return f"BesselJumpSpec(alpha={self.alpha}, a={self.a}, t={self.t})"


def example_jump_measure(alpha, a, t):
    """The min-form jump measure with tail index -2/alpha and part (log x)^(t-1).

    For t = 1 the two branches cross exactly at 1 and the measure reduces to
    a piecewise power with unit tail constant from the crossover on.
    """
    spec = BesselJumpSpec(alpha, a, t)
    if spec.t == 1.0:
        c = 2.0 / spec.alpha
        out = PiecewisePowerJump(c, -spec.a - 1.0,
                                 c, -2.0 / spec.alpha - 1.0, split=1.0)
        out.L_sv = ConstantSV(1.0)
    else:
        out = _MinFormJump(spec)
    out.alpha = spec.alpha
    out.a = spec.a
    out.t = spec.t
    return out


def _branch_roots(b, q):
    """Roots of b u = q log u on u > 0, ascending; zero, one, or two.

    b > 0.  For q < 0 the difference is increasing with a single crossing;
    for q > 0 it is convex with minimum at u = q/b, giving two crossings
    exactly when that minimum is negative.
    """
    phi = lambda u: b * u - q * math.log(u)
    if q == 0.0:
        return ()
    if q < 0.0:
        lo = 1.0
        while phi(lo) >= 0.0:
            lo *= 0.5
            if lo < 1e-280:
                raise NonConvergenceError("branch crossing escaped below")
        hi = 1.0
        while phi(hi) <= 0.0:
            hi *= 2.0
        return (brentq(phi, lo, hi, xtol=1e-15),)
    u_star = q / b
    if q * (1.0 - math.log(u_star)) >= 0.0:
        return ()
    lo = u_star
    while phi(lo) <= 0.0:
        lo *= 0.5
        if lo < 1e-280:
            raise NonConvergenceError("branch crossing escaped below")
    hi = u_star
    while phi(hi) <= 0.0:
        hi *= 2.0
    return (brentq(phi, lo, u_star, xtol=1e-15),
            brentq(phi, u_star, hi, xtol=1e-15))


class _MinFormJump(JumpMeasure):
    """Density (2/alpha) min(x^(-a-1), (log x)^(t-1) x^(-2/alpha-1)), t != 1.

    The branch regions are resolved at construction from the roots of the
    log branch ratio; tails evaluate in closed form through incomplete
    gamma pieces, so no quadrature is involved.  For t > 1 the min drops to
    the log branch discontinuously at 1, which is why 1 is a breakpoint.
    """

    def __init__(self, spec: BesselJumpSpec):
        self.alpha = spec.alpha
        self.a = spec.a
        self.t = spec.t
        self.c = 2.0 / spec.alpha
        self.near_zero_exponent = -spec.a - 1.0
        self.L_sv = LogPowerSV(spec.t - 1.0)

        roots = _branch_roots(2.0 / spec.alpha - spec.a, spec.t - 1.0)
        if spec.t < 1.0:
            # the log branch blows up at 1+, so the inner power carries
            # through 1 up to the single crossing
            self._bounds = (math.exp(roots[0]),)
            self._branches = ("inner", "outer")
        elif roots:
            x1, x2 = (math.exp(u) for u in roots)
            self._bounds = (1.0, x1, x2)
            self._branches = ("inner", "outer", "inner", "outer")
        else:
            self._bounds = (1.0,)
            self._branches = ("inner", "outer")
        # tails at the bounds, accumulated from infinity down
        tails = [0.0] * len(self._bounds)
        tails[-1] = self._piece("outer", self._bounds[-1], math.inf)
        for i in range(len(self._bounds) - 2, -1, -1):
            tails[i] = tails[i + 1] + self._piece(
                self._branches[i + 1], self._bounds[i], self._bounds[i + 1])
        self._tails = tuple(tails)

    def _piece(self, branch, p, q):
        """j mass of one branch over (p, q]."""
        if branch == "inner":
            hi = 0.0 if q == math.inf else q ** -self.a
            return (self.c / self.a) * (p ** -self.a - hi)
        za = 2.0 / self.alpha
        zp = za * math.log(p) if p > 1.0 else 0.0
        top = 0.0 if q == math.inf else _upper_gamma(self.t, za * math.log(q))
        return self.c * (1.0 / za) ** self.t * (_upper_gamma(self.t, zp) - top)

    def density(self, x):
        arr = _check_positive(x)
        xs = np.atleast_1d(np.asarray(arr, dtype=float))
        out = xs ** (-self.a - 1.0)
        hi = xs > 1.0
        if hi.any():
            lx = np.log(xs[hi])
            with np.errstate(divide="ignore"):
                # (log x)^(t-1) hits 0^neg just above 1 for t < 1; the inf
                # loses the min, which is the right branch there
                outer = lx ** (self.t - 1.0) * xs[hi] ** (-2.0 / self.alpha - 1.0)
            out[hi] = np.minimum(out[hi], outer)
        out *= self.c
        return float(out[0]) if arr.ndim == 0 else out

    def tail(self, x):
        arr = _check_positive(x)
        xs = np.atleast_1d(np.asarray(arr, dtype=float))
        out = np.empty_like(xs)
        for i, xi in enumerate(xs):
            k = int(np.searchsorted(self._bounds, xi))
            if k == len(self._bounds):
                out[i] = self._piece("outer", float(xi), math.inf)
            else:
                out[i] = self._tails[k] + self._piece(
                    self._branches[k], float(xi), self._bounds[k])
        return float(out[0]) if arr.ndim == 0 else out

    def breakpoints(self):
        return self._bounds

    def __repr__(self):
        return (f"_MinFormJump(alpha={self.alpha}, a={self.a}, t={self.t}, "
                f"bounds={self._bounds})")


def _upper_gamma(t, z):
    """int_z^inf w^(t-1) e^-w dw for real t; z must be positive when t <= 0."""
    if t > 0.0:
        return float(gammaincc(t, z)) * math.gamma(t)
    if z <= 0.0:
        raise DomainError(f"upper gamma diverges at z = {z} for t = {t} <= 0")
    # lift the order until positive: G(t, z) = (G(t+1, z) - z^t e^-z) / t
    return (_upper_gamma(t + 1.0, z) - z ** t * math.exp(-z)) / t


def N_asymptotic_constant(alpha, s, t):
    """Constant in N(gamma) ~ C (log gamma)^p, p = 2(s-1)/alpha + t.

    For alpha > 2 the nested mean accumulates K^2 L / x, whose log-power
    integrand brings a 1/p from integration:

        C = alpha / ((alpha - 1)(alpha - 2) p).

    For alpha = 2 there is one more log layer and C = 1/(t(s+t)).  The
    admissible region keeps N(inf) infinite with genuine power growth:
    p > 0 for alpha > 2 (the boundary p = 0 degenerates to log log) and
    t > 0, s + t > 0 for alpha = 2.
    """
    alpha = float(alpha)
    s = float(s)
    t = float(t)
    if alpha < 2.0:
        raise ParameterError(
            f"the nested-mean constant is defined for alpha >= 2, "
            f"got alpha = {alpha}")
    if alpha == 2.0:
        if not (t > 0.0 and s + t > 0.0):
            raise ParameterError(
                f"alpha = 2 needs t > 0 and s + t > 0, got t = {t}, "
                f"s + t = {s + t}")
        return 1.0 / (t * (s + t))
    p = 2.0 * (s - 1.0) / alpha + t
    if p < 0.0:
        raise ParameterError(
            f"N stays bounded for 2(s-1)/alpha + t = {p} < 0; no "
            f"asymptotic constant exists")
    if p == 0.0:
        raise ParameterError(
            "the boundary 2(s-1)/alpha + t = 0 grows like log log and "
            "carries no power constant")
    return alpha / ((alpha - 1.0) * (alpha - 2.0) * p)


def suggested_uv(alpha, s, t, eps=0.5, c1=None):
    """Normalizer pair (u, v) matched to the family with parameters (s, t).

    u(g) = sqrt(c1) (log g)^((s-1)/alpha + eps/2),
    v(g) = c2 (log g)^(t-1+eps),       c1 c2 = N_asymptotic_constant.

    Then u^2 v = C (log g)^(p + 2 eps - 1), which matches the growth of N
    exactly at eps = 1/2; that choice sends the recentered Laplace exponent
    of the rescaled family to -lam^2 with unit constant.
    """
    if not alpha > 2.0:
        raise ParameterError(
            f"the pair is built for alpha > 2; integer alpha = 2 carries "
            f"its own normalization (got alpha = {alpha})")
    if not 0.0 < eps < 1.0:
        raise ParameterError(f"eps must lie in (0, 1), got {eps}")
    C = N_asymptotic_constant(alpha, s, t)
    if c1 is None:
        c1 = math.sqrt(C)
    c1 = float(c1)
    if c1 <= 0.0:
        raise ParameterError(f"c1 must be positive, got {c1}")
    u = LogPowerSV((s - 1.0) / alpha + 0.5 * eps, coef=math.sqrt(c1))
    v = LogPowerSV(t - 1.0 + eps, coef=C / c1)
    return u, v


def scaling_family(alpha, a=None, t=1.0, s=1.0, x0=math.e, eps=0.5):
    """The rescaling family of the drift pair with its matched (u, v)."""
    if a is None:
        a = 0.5 / float(alpha)
    spec = BesselDriftSpec.from_alpha(alpha, s=s, x0=x0)
    m = natural_scale_string(spec)
    j = example_jump_measure(alpha, a, t)
    u, v = suggested_uv(alpha, s, t, eps=eps)
    return ScalingFamily(m, j, alpha, u, v)
