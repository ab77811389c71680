"""Laplace exponents of inverse local times and their scaling limits.

The inverse local time at 0 of a jumping-in diffusion is a subordinator
with drift b = int (-G) dj and jump part chi(lam) = int (1 - g(lam; .)) dj.
This module evaluates both, plus the recentered exponent chi(lam) - b lam
under the gamma-rescaling that sends it to -lam^2, and the slowly varying
bookkeeping (u, v, their construction from the nested quantity N, de
Bruijn conjugates, tail envelopes) that the rescaling runs on.

The recentered exponent is never formed as a difference of its two nearly
equal halves.  The integrand g - 1 + lam |G| is evaluated directly (see
eigen.g_excess); at gamma ~ 1e8 the subtraction route loses everything to
roundoff amplified by the diverging near-zero j-mass.

Normalization note: u and v must satisfy u(s)^2 v(s) ~ N(s) with all three
read at the same argument s.  The family applies them at s = gamma^(alpha/2),
and the log-flat stretch of the excess integral then carries exactly the
octave count that N(s) counts, which is what makes the limit constant 1.
"""

from collections import namedtuple

import numpy as np
from scipy.interpolate import PchipInterpolator

from .eigen import g, g_excess, psi
from .errors import (
    DivergenceError,
    NonConvergenceError,
    OverflowGuardError,
    ParameterError,
    VerificationError,
)
from .measure import JumpMeasure, N_of_gamma, String
from .quadrature import integrate, integrate_upper_tail, integrate_zero_singular

# Scaled jump measures carry their crossover scale at split/gamma', so the
# integrands below can hold a non-decaying stretch of dyads for ~log2(gamma')
# octaves before the near-zero decay shows; the divergence heuristic needs
# enough patience to ride that out (80 octaves covers gamma up to ~1e13 for
# alpha around 3.5, and genuine divergence still trips the detector, merely
# later).  Upper-tail sweeps keep the tight default: beyond the crossover
# the integrands there are regular, and flatness really means divergence.
_ZERO_FLAT_WINDOW = 80


# ---------------------------------------------------------------------------
# slowly varying functions


class SlowlyVarying:
    """Positive function with f(cx)/f(x) -> 1; supports * and ** algebra."""

    def __call__(self, x):
        raise NotImplementedError

    def __mul__(self, other):
        return ProductSV([(self, 1.0), (other, 1.0)])

    def __pow__(self, exponent):
        return ProductSV([(self, float(exponent))])


class ConstantSV(SlowlyVarying):
    def __init__(self, value):
        if value <= 0.0:
            raise ParameterError(f"constant must be positive, got {value}")
        self.value = float(value)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, self.value)
        return float(out) if x.ndim == 0 else out

    def __repr__(self):
        return f"ConstantSV({self.value})"


class LogPowerSV(SlowlyVarying):
    """coef * (log x)^power, with log x clamped below e.

    The clamp keeps values positive and finite on all of (0, inf); only the
    large-x behavior carries meaning.
    """

    def __init__(self, power, coef=1.0):
        if coef <= 0.0:
            raise ParameterError(f"coef must be positive, got {coef}")
        self.power = float(power)
        self.coef = float(coef)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = self.coef * np.maximum(np.log(np.maximum(x, 1e-300)), 1.0) ** self.power
        return float(out) if x.ndim == 0 else out

    def __repr__(self):
        return f"LogPowerSV({self.power}, coef={self.coef})"


class ProductSV(SlowlyVarying):
    """prod f_i(x)^{e_i}; nested products flatten."""

    def __init__(self, factors):
        flat = []
        for f, e in factors:
            e = float(e)
            if isinstance(f, ProductSV):
                flat.extend((g_, e_ * e) for g_, e_ in f.factors)
            else:
                flat.append((f, e))
        self.factors = flat

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.ones(x.shape)
        for f, e in self.factors:
            out = out * np.asarray(f(x), dtype=float) ** e
        return float(out) if x.ndim == 0 else out

    def __pow__(self, exponent):
        return ProductSV([(f, e * float(exponent)) for f, e in self.factors])

    def __repr__(self):
        return f"ProductSV({self.factors!r})"


class TabulatedSV(SlowlyVarying):
    """Monotone log-log interpolant through measured (x, f(x)) samples.

    Extrapolates with the boundary cubics, so keep the sample range at least
    as wide as the arguments the family will ask for.
    """

    def __init__(self, xs, ys):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs.ndim != 1 or xs.shape != ys.shape or len(xs) < 2:
            raise ParameterError("need matching 1-d sample arrays, >= 2 points")
        if np.any(xs <= 0.0) or np.any(ys <= 0.0):
            raise ParameterError("samples must be positive")
        if np.any(np.diff(xs) <= 0.0):
            raise ParameterError("sample points must increase")
        self.xs, self.ys = xs, ys
        self._interp = PchipInterpolator(np.log(xs), np.log(ys),
                                         extrapolate=True)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.exp(self._interp(np.log(x)))
        return float(out) if x.ndim == 0 else out

    def __repr__(self):
        return f"TabulatedSV({len(self.xs)} pts on [{self.xs[0]:g}, {self.xs[-1]:g}])"


SlowVariationReport = namedtuple("SlowVariationReport", "ok ratios")


def check_slow_variation(f, x0=1e3, doublings=20, tol=0.05):
    """Doubling ratios f(2x)/f(x) from x0; ok when the final deviation is
    within tol and no larger than the first."""
    xs = x0 * 2.0 ** np.arange(doublings + 1)
    vals = np.array([float(f(x)) for x in xs])
    if np.any(vals <= 0.0) or not np.all(np.isfinite(vals)):
        return SlowVariationReport(False, np.array([]))
    ratios = vals[1:] / vals[:-1]
    dev = np.abs(ratios - 1.0)
    ok = bool(dev[-1] <= tol and dev[-1] <= dev[0] + 1e-12)
    return SlowVariationReport(ok, ratios)


def de_bruijn_conjugate(f, x, tol=1e-8, max_iter=200):
    """Value at x of the conjugate f#, via the fixed point y = 1/f(x y).

    The conjugate satisfies f#(x) f(x f#(x)) -> 1; the fixed point makes
    that product exactly 1 at each x, which pins f# up to asymptotic
    equivalence.  Plain iteration contracts because f varies slowly.
    """
    x = float(x)
    if x <= 0.0:
        raise ParameterError(f"argument must be positive, got {x}")
    y = 1.0
    for _ in range(max_iter):
        fy = float(f(x * y))
        if not np.isfinite(fy) or fy <= 0.0:
            raise NonConvergenceError(
                f"conjugate iteration left the domain: f({x * y:g}) = {fy}")
        y_new = 1.0 / fy
        if abs(y_new - y) <= tol * abs(y_new):
            return y_new
        y = y_new
    raise NonConvergenceError(
        f"conjugate fixed point did not settle in {max_iter} iterations at x = {x:g}")


# ---------------------------------------------------------------------------
# Laplace exponent of the inverse local time


def _pointwise(fn):
    # quadrature passes arrays; eigenfunction evaluations are scalar
    def wrapped(x):
        arr = np.atleast_1d(np.asarray(x, dtype=float))
        return np.array([fn(float(t)) for t in arr])
    return wrapped


def _density_cuts(j, lo, hi):
    pts = j.breakpoints() if hasattr(j, "breakpoints") else ()
    return sorted(float(p) for p in pts if lo < p < hi)


def _int_to_zero(f, b, j, rel_tol):
    """int_0^b f where f carries the jump density.

    A Gauss panel straddling a density kink loses about four digits, so
    integrate between the kinks and run the endpoint sweep only below the
    lowest one, where the integrand is smooth all the way down.
    """
    cuts = _density_cuts(j, 0.0, b) + [b]
    out = integrate_zero_singular(f, cuts[0], rel_tol=rel_tol, abs_tol=0.0,
                                  flat_window=_ZERO_FLAT_WINDOW).value
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        out += integrate(f, lo, hi, rel_tol=rel_tol)
    return out


def _int_to_inf(f, a, j, rel_tol):
    """int_a^inf f, split at any density kinks above a."""
    cuts = [a] + _density_cuts(j, a, np.inf)
    out = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        out += integrate(f, lo, hi, rel_tol=rel_tol)
    return out + integrate_upper_tail(f, cuts[-1], rel_tol=rel_tol,
                                      abs_tol=0.0).value


def b_mean(m: String, j: JumpMeasure, rel_tol=1e-9):
    """Drift b = int_0^inf (-G)(y) j(dy) of the inverse local time.

    Finite exactly when the string tail mass is finite (positive recurrence)
    and the j-tail unloads fast enough.  The string must carry the
    m(inf) = 0 normalization for (-G) to be the mean hitting time E_y[T_0];
    a verbatim tabulated string should end at value 0.
    """
    if not m.finite_tail:
        raise DivergenceError(
            "b needs a finite string tail mass; the mean return time is "
            "infinite here")

    def f(y):
        return np.abs(np.asarray(m.G(y), dtype=float)) * j.density(y)

    low = _int_to_zero(f, 1.0, j, rel_tol)
    try:
        high = _int_to_inf(f, 1.0, j, rel_tol)
    except DivergenceError as exc:
        raise DivergenceError(
            f"int_1^inf (-G) dj does not converge: {exc}") from exc
    return low + high


def chi(m: String, j: JumpMeasure, lam, rel_tol=1e-8, g_tol=1e-12):
    """Jump part chi(lam) = int_0^inf (1 - g(lam; y)) j(dy).

    Increasing and concave in lam, with chi(0) = 0.  On (0, 1] the direct
    integrand 1 - g sinks below the roundoff of g ~ 1 while the j-mass
    diverges, so that side is taken as lam int |G| dj minus the excess
    integral, two one-signed pieces with full relative accuracy; the tail
    side uses 1 - g directly.
    """
    lam = float(lam)
    if lam < 0.0:
        raise ParameterError(f"chi needs lambda >= 0, got {lam}")
    if lam == 0.0:
        return 0.0

    def f_drift(y):
        return np.abs(np.asarray(m.G(y), dtype=float)) * np.asarray(
            j.density(y), dtype=float)

    @_pointwise
    def f_excess(y):
        dens = float(np.asarray(j.density(y), dtype=float))
        if dens == 0.0:
            return 0.0
        return g_excess(m, lam, y, tol=g_tol).value * dens

    @_pointwise
    def f_high(y):
        dens = float(np.asarray(j.density(y), dtype=float))
        if dens == 0.0:
            return 0.0
        try:
            gval = g(m, lam, y, tol=g_tol).value
        except OverflowGuardError:
            # psi beyond double range, so g <= 1/psi+ is far below roundoff
            gval = 0.0
        return (1.0 - gval) * dens

    low = (lam * _int_to_zero(f_drift, 1.0, j, rel_tol)
           - _int_to_zero(f_excess, 1.0, j, rel_tol))
    high = _int_to_inf(f_high, 1.0, j, rel_tol)
    return low + high


def _h_integral(m: String, j: JumpMeasure, lam, rel_tol=1e-6, point_tol=1e-12):
    """int_0^inf (g(lam; y) - 1 + lam |G|(y)) j(dy); every piece >= 0.

    Split at 1 and at a cutoff Y: dyadic refinement on (0, 1], log-spaced
    panels on [1, Y], and beyond Y the exact bracket

        int_Y^inf (1 - g) dj  in  [Jbar(Y) (1 - gbar), Jbar(Y)],
        gbar = 1/psi+(Y) >= g(Y),

    combined with lam int_Y^inf |G| dj.  Y doubles until the bracket
    half-width clears rel_tol.  The [1, Y] stretch has nearly constant
    octave masses while the excess sits in its quadratic regime, so it must
    stay out of the tail integrator whose flatness detector would call it
    divergent; the closure exists to end that stretch analytically, not to
    save panels.
    """
    lam = float(lam)

    @_pointwise
    def f(y):
        dens = float(np.asarray(j.density(y), dtype=float))
        if dens == 0.0:
            return 0.0
        try:
            val = g_excess(m, lam, y, tol=point_tol).value
        except OverflowGuardError:
            # g itself is below roundoff once psi overflows
            val = lam * abs(float(np.asarray(m.G(y), dtype=float))) - 1.0
        return val * dens

    head = _int_to_zero(f, 1.0, j, 0.5 * rel_tol)
    if float(np.asarray(j.tail(1.0), dtype=float)) == 0.0:
        return head

    def g_tail_part(y):
        return np.abs(np.asarray(m.G(y), dtype=float)) * np.asarray(
            j.density(y), dtype=float)

    # starting cutoff: deep enough that the decreasing eigenfunction is
    # already in its steep regime, unless the j support ends first
    Y = 4.0
    for _ in range(540):
        if (float(np.asarray(j.tail(Y), dtype=float)) == 0.0
                or lam * float(np.asarray(m.x_dm_below(Y), dtype=float)) >= 35.0):
            break
        Y *= 2.0

    for _ in range(60):
        edges = [1.0] + _density_cuts(j, 1.0, Y) + [Y]
        mid = sum(integrate(f, lo, hi, rel_tol=0.25 * rel_tol)
                  for lo, hi in zip(edges[:-1], edges[1:]))
        jbar = float(np.asarray(j.tail(Y), dtype=float))
        if jbar == 0.0:
            return head + mid
        try:
            dplus = psi(m, lam, Y).derivative_plus
            gbar = min(1.0, 1.0 / dplus) if np.isfinite(dplus) else 0.0
        except OverflowGuardError:
            gbar = 0.0
        tail_G = _int_to_inf(g_tail_part, Y, j, 0.25 * rel_tol)
        closure = lam * tail_G - jbar * (1.0 - 0.5 * gbar)
        half_width = 0.5 * jbar * gbar
        total = head + mid + closure
        if half_width <= rel_tol * max(abs(total), 1e-300):
            return total
        Y *= 2.0
    raise NonConvergenceError(
        "tail closure bracket for the excess integral did not shrink "
        f"below rel_tol = {rel_tol:g}")


# ---------------------------------------------------------------------------
# the rescaled family


class ScalingFamily:
    """The gamma-indexed rescaling of a string and jumping-in measure.

    With s = gamma^(alpha/2),

        m_gamma = (gamma^((alpha-1)/2) / u(s)) m(s .),
        j_gamma(x, inf) = (gamma / v(s)) j(s x, inf),

    under which g for m_gamma at lam equals g for m at
    lam' = lam / (sqrt(gamma) u(s)), and the drift rescales to
    b sqrt(gamma) / (u(s) v(s)).
    """

    def __init__(self, m: String, j: JumpMeasure, alpha, u, v):
        if alpha <= 1.0:
            raise ParameterError(f"alpha must exceed 1, got {alpha}")
        if not m.finite_tail:
            raise ParameterError(
                "scaling family needs a string with finite tail mass")
        if not callable(u) or not callable(v):
            raise ParameterError("u and v must be callables of gamma^(alpha/2)")
        for name, fn in (("u", u), ("v", v)):
            probe = float(fn(1e3))
            if not np.isfinite(probe) or probe <= 0.0:
                raise ParameterError(
                    f"{name}(1e3) = {probe}; normalizers must be positive")
        self.m = m
        self.j = j
        self.alpha = float(alpha)
        self.u = u
        self.v = v
        self._b = None

    def gamma_arg(self, gamma):
        return float(gamma) ** (self.alpha / 2.0)

    def string_at(self, gamma):
        gamma = float(gamma)
        s = self.gamma_arg(gamma)
        cv = gamma ** ((self.alpha - 1.0) / 2.0) / float(self.u(s))
        return self.m.scaled(cv, s)

    def jump_at(self, gamma):
        gamma = float(gamma)
        s = self.gamma_arg(gamma)
        return self.j.scaled(gamma / float(self.v(s)), s)

    def lam_base(self, gamma, lam):
        """The argument at which the unscaled string sees lam."""
        gamma = float(gamma)
        return float(lam) / (np.sqrt(gamma) * float(self.u(self.gamma_arg(gamma))))

    def mass_factor(self, gamma):
        gamma = float(gamma)
        return gamma / float(self.v(self.gamma_arg(gamma)))

    @property
    def b(self):
        if self._b is None:
            self._b = b_mean(self.m, self.j)
        return self._b

    def b_gamma(self, gamma):
        gamma = float(gamma)
        s = self.gamma_arg(gamma)
        return self.b * np.sqrt(gamma) / (float(self.u(s)) * float(self.v(s)))


def fluct_exponent(fam: ScalingFamily, gamma, lam, rel_tol=1e-6,
                   via_scaled=False):
    """Recentered exponent chi_gamma(lam) - b_gamma lam; tends to -lam^2.

    Evaluated as -(gamma/v) int (g - 1 + lam' |G|) dj on the base pair, or
    with via_scaled on the rescaled pair directly.  The two routes share no
    quadrature grid, so their agreement is a real cross-check.
    """
    lam = float(lam)
    if lam < 0.0:
        raise ParameterError(f"lambda must be >= 0, got {lam}")
    if float(gamma) <= 0.0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    if lam == 0.0:
        return 0.0
    if via_scaled:
        return -_h_integral(fam.string_at(gamma), fam.jump_at(gamma), lam,
                            rel_tol=rel_tol)
    lamp = fam.lam_base(gamma, lam)
    return -fam.mass_factor(gamma) * _h_integral(fam.m, fam.j, lamp,
                                                 rel_tol=rel_tol)


# ---------------------------------------------------------------------------
# constructing u and v from the nested quantity N


ConstructedUV = namedtuple("ConstructedUV", "u v S N K L")


def construct_uv(m: String, j: JumpMeasure, alpha, p=0.5, N=None, grid=None):
    """Normalizers u = S^(p/2) K and v = S^(1-p) L with S = N/(K^2 L).

    K and L are the slowly varying tail parts of the string and jump
    measure (constants 1 when the measures do not carry them); N defaults
    to a log-log interpolant of the measured nested quantity.  By
    construction u^2 v = N identically, which is the normalization that
    sends the recentered exponent to -lam^2.

    Raises VerificationError when the construction fails its own checks on
    the grid: u^2 v / N inside [0.5, 2] from 1e6 on, and K/u, L/v strictly
    decreasing.  A constant-multiple N (the degenerate case at integer
    alpha) fails the monotonicity check.
    """
    if not 0.0 < p <= 1.0:
        raise ParameterError(f"p must lie in (0, 1], got {p}")
    K = m.K_sv if m.K_sv is not None else ConstantSV(1.0)
    L = j.L_sv if j.L_sv is not None else ConstantSV(1.0)
    if N is None:
        xs = np.geomspace(1e2, 1e16, 15)
        ys = np.array([N_of_gamma(m, j, x) for x in xs])
        if np.any(ys <= 0.0):
            raise VerificationError("measured N is not positive on the grid")
        N = TabulatedSV(xs, ys)
    S = ProductSV([(N, 1.0), (K, -2.0), (L, -1.0)])
    u = ProductSV([(S, 0.5 * p), (K, 1.0)])
    v = ProductSV([(S, 1.0 - p), (L, 1.0)])

    if grid is None:
        grid = np.geomspace(1e6, 1e12, 7)
    grid = np.asarray(grid, dtype=float)
    ratio = u(grid) ** 2 * v(grid) / N(grid)
    if np.any(ratio < 0.5) or np.any(ratio > 2.0):
        raise VerificationError(
            f"u^2 v / N leaves [0.5, 2] on the check grid: {ratio}")
    for name, top, bottom in (("K/u", K, u), ("L/v", L, v)):
        vals = np.asarray(top(grid), dtype=float) / np.asarray(
            bottom(grid), dtype=float)
        if not np.all(np.diff(vals) < 0.0):
            raise VerificationError(
                f"{name} is not strictly decreasing on the check grid; the "
                "normalization has no room to absorb the remaining growth")
    return ConstructedUV(u, v, S, N, K, L)


def tail_estimate(fam: ScalingFamily, s):
    """Envelope for the stationary-overshoot tail at level s.

    With U(sigma) = u(sigma^(alpha/2)) and U# its de Bruijn conjugate,
    read at s^2:

        s^-2 U#(s^2)^-1 v((s^2 U#(s^2))^(alpha/2)).
    """
    s = float(s)
    if s <= 0.0:
        raise ParameterError(f"level must be positive, got {s}")

    def U(sigma):
        return fam.u(float(sigma) ** (fam.alpha / 2.0))

    conj = de_bruijn_conjugate(U, s * s)
    return s ** -2.0 / conj * float(fam.v((s * s * conj) ** (fam.alpha / 2.0)))
