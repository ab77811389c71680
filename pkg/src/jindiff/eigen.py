"""Eigenfunctions psi, phi^d, g of a string and the connection constant c^d.

psi solves the integral equation psi(x) = x + lambda int_0^x dy int_0^y psi dm
(Picard series sum_k lambda^k (s.m.)^k s applied to s(x) = x), phi^d extends
the second solution below the singularity using the G^k head, and g is the
non-increasing solution psi(x) int_x^infty dy / psi(y)^2 with g(0+) = 1.

Every evaluation carries a certified truncation bound from the factorial
majorant (1/k!)((m.s)(x))^k e^{lambda (m.s)(x)}.  Series coefficients are
kept as signed log-magnitudes so that the majorant's exponential looseness
never overflows intermediate arithmetic; an evaluation only fails when the
result itself leaves double range.

Three chain backends mirror the measure module: log-monomial chains for
power/affine strings (a one-term density keeps every Picard iterate a short
power-log sum), exact piecewise-linear chains on the atoms of tabulated
strings (the series terminates once the mass is exhausted and g has a
closed-form linear tail), and dense-grid tables for callable densities.
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.special import gammaln

from .errors import (
    ConditioningError,
    DivergenceError,
    NonConvergenceError,
    OverflowGuardError,
    ParameterError,
)
from .measure import String, TabulatedString, _PiecewiseLinear
from .powerlog import PowerLogPoly
from .quadrature import integrate, panel_values

# lambda*(m.s)(x) beyond this cannot produce a representable eigenfunction
_OVERFLOW_GATE = 1.25e5
_MAX_TERMS = 2_000_000


@dataclass
class EigenEval:
    value: float
    derivative_plus: float
    truncation_bound: float
    terms_used: int


@dataclass
class ScalingResiduals:
    """Residuals of g_m(a lam; b x) - g_{a m(b.)}(b lam; x) and of the psi
    analogue psi_m(a lam; b x) - b psi_{a m(b.)}(b lam; x), with bounds."""

    g_residual: float
    psi_residual: float
    g_bound: float
    psi_bound: float

    @property
    def ok(self):
        return (abs(self.g_residual) <= self.g_bound
                and abs(self.psi_residual) <= self.psi_bound)


# ---------------------------------------------------------------------------
# signed log-magnitude power-log sums (internal)


def _sadd(terms, key, sign, logmag):
    """Accumulate sign*exp(logmag)*x^p log^q x into the term dict."""
    if logmag == -np.inf:
        return
    cur = terms.get(key)
    if cur is None:
        terms[key] = (sign, logmag)
        return
    s0, l0 = cur
    if s0 == sign:
        terms[key] = (s0, np.logaddexp(l0, logmag))
    elif abs(l0 - logmag) < 1e-14:
        del terms[key]
    elif l0 > logmag:
        terms[key] = (s0, l0 + np.log1p(-np.exp(logmag - l0)))
    else:
        terms[key] = (sign, logmag + np.log1p(-np.exp(l0 - logmag)))


class _LogPoly:
    """Finite sum of sign * e^logmag * x^p (log x)^q terms."""

    __slots__ = ("terms",)

    def __init__(self, terms):
        self.terms = terms

    @classmethod
    def from_plp(cls, poly: PowerLogPoly):
        t = {}
        for (p, q), c in poly.terms.items():
            if c != 0.0:
                t[(float(p), int(q))] = (1.0 if c > 0 else -1.0, np.log(abs(c)))
        return cls(t)

    def times_power(self, logc, p_shift):
        return _LogPoly({(p + p_shift, q): (s, lm + logc)
                         for (p, q), (s, lm) in self.terms.items()})

    def int0(self):
        """x -> int_0^x of self; every power must exceed -1."""
        out = {}
        for (p, q), (s, lm) in self.terms.items():
            a = p + 1.0
            if a <= 1e-12:
                raise DivergenceError(f"chain term x^{p} is not integrable at 0")
            la = np.log(a)
            # int_0^x t^p log^q t dt = x^a sum_i (-1)^{q-i}(q!/i!) a^{i-q-1} log^i x
            fac = lm - la
            sign = s
            for i in range(q, -1, -1):
                _sadd(out, (a, i), sign, fac)
                if i > 0:
                    fac += np.log(i) - la
                    sign = -sign
        return _LogPoly(out)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        lx = np.log(x)
        out = np.zeros_like(lx)
        for (p, q), (s, lm) in self.terms.items():
            term = s * np.exp(lm + p * lx)
            if q:
                term = term * lx**q
            out += term
        return out


# ---------------------------------------------------------------------------
# majorant bookkeeping shared by all chains


def _terms_needed(x, z, log_tol, log_extra=0.0, min_terms=0):
    """Smallest K with x z^K/K! e^z e^{log_extra} <= tol, in log arithmetic."""
    if x <= 0.0 or z == 0.0:
        return max(0, min_terms)
    if z > _OVERFLOW_GATE:
        raise OverflowGuardError(
            f"majorant exponent lambda*(m.s)(x) = {z:.3g} puts the "
            f"eigenfunction beyond double range")
    base = np.log(x) + z + log_extra
    lz = np.log(z)
    # the log-term is decreasing in K past z, so the first hit inside a
    # window is the global first hit; widen geometrically until one lands
    lo = max(1, int(z))
    width = 32
    while lo <= _MAX_TERMS:
        ks = np.arange(lo, min(lo + width, _MAX_TERMS) + 1)
        ok = base + ks * lz - gammaln(ks + 1.0) <= log_tol
        hit = int(np.argmax(ok))
        if ok[hit]:
            return max(int(ks[hit]), min_terms)
        lo = int(ks[-1]) + 1
        width *= 2
    raise NonConvergenceError(
        f"series needs more than {_MAX_TERMS} certified terms")


def _tail_value(x, z, K, log_extra=0.0):
    if x <= 0.0 or z == 0.0:
        return 0.0
    lt = np.log(x) + z + log_extra + K * np.log(z) - gammaln(K + 1)
    return float(np.exp(min(lt, 700.0)))


# ---------------------------------------------------------------------------
# psi chains


class _MonoPsiChain:
    """Picard iterates for a one-power density: f_k = e^{lc_k} x^{p_k}."""

    def __init__(self, string, lam, log_rho, p_rho):
        self.string = string
        self.lam = float(lam)
        self.llam = np.log(abs(self.lam)) if self.lam != 0.0 else -np.inf
        self.lr = log_rho
        self.pr = p_rho
        self.lc = np.array([0.0])
        self.p = np.array([1.0])
        # lc with the lambda powers folded in, kept alongside lc so the
        # evaluators do not rebuild it per call
        self.lck = np.array([0.0])
        self.K = 1

    def _ms(self, x):
        return float(np.asarray(self.string.x_dm_below(x), dtype=float))

    def ensure(self, x, tol, min_terms=0):
        K = _terms_needed(float(x), abs(self.lam) * self._ms(x), np.log(tol),
                          min_terms=min_terms)
        K = max(K, 1)
        if K > len(self.lc):
            n = K - len(self.lc)
            p_prev = self.p[-1] + (self.pr + 2.0) * np.arange(n)
            incr = (self.lr - np.log(p_prev + self.pr + 1.0)
                    - np.log(p_prev + self.pr + 2.0))
            self.lc = np.concatenate((self.lc, self.lc[-1] + np.cumsum(incr)))
            self.p = np.concatenate((self.p, p_prev + self.pr + 2.0))
            if self.lam != 0.0:
                self.lck = self.lc + self.llam * np.arange(len(self.lc))
        self.K = max(self.K, K)
        return K

    def _weights(self, xs, K):
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        lx = np.log(np.maximum(xs, 1e-300))
        kl = self.lck[:K]
        # terms are unimodal in k; anything 45 nats under the peak is below
        # one ulp of the sum, so stop the matrix there (the certificate from
        # ensure() still uses the full K)
        head = kl + self.p[:K] * lx.max()
        pk = int(np.argmax(head))
        cut = int(np.argmax(head[pk:] < head[pk] - 45.0))
        if cut:
            K = pk + cut
            kl = kl[:K]
        mat = kl[:, None] + self.p[:K, None] * lx[None, :]
        with np.errstate(over="ignore"):
            w = np.exp(mat)
        if self.lam < 0.0:
            w[1::2] *= -1.0
        w[:, xs == 0.0] = 0.0
        return xs, w

    def value(self, xs, K=None):
        if self.lam == 0.0:
            return np.atleast_1d(np.asarray(xs, dtype=float)).copy()
        xs, w = self._weights(xs, self.K if K is None else K)
        # inf is a meaningful saturation value here; callers test isfinite
        with np.errstate(over="ignore"):
            return w.sum(axis=0)

    def deriv(self, xs, K=None):
        K = self.K if K is None else K
        if self.lam == 0.0:
            return np.ones_like(np.atleast_1d(np.asarray(xs, dtype=float)))
        xs, w = self._weights(xs, K)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            out = (w * self.p[: len(w), None]).sum(axis=0) / xs
        return np.where(xs == 0.0, 1.0, out)

    def tail1(self, xs, K=None):
        """psi(x) - x as the sum over iterates k >= 1 (no cancellation)."""
        if self.lam == 0.0:
            return np.zeros_like(np.atleast_1d(np.asarray(xs, dtype=float)))
        xs, w = self._weights(xs, self.K if K is None else K)
        with np.errstate(over="ignore"):
            return w[1:].sum(axis=0)

    def bound(self, x, K=None):
        K = self.K if K is None else K
        return _tail_value(float(x), abs(self.lam) * self._ms(x), K)


class _TabPsiChain:
    """Exact piecewise-linear iterates on a tabulated string's atoms.

    Once an iterate vanishes on the whole support the series has terminated
    and the truncation bound is exactly zero.
    """

    def __init__(self, string, lam):
        self.string = string
        self.lam = float(lam)
        self.ts, self.ws = string.atoms()
        self.starts = np.concatenate(([0.0], self.ts))
        self.fs = [_PiecewiseLinear([0.0], [0.0], 1.0, 1.0)]
        self.mf_vals = []  # step values of m.f_{k-1} on the atom segments
        self.exhausted = None
        self.K = 1

    def _ms(self, x):
        return float(np.asarray(self.string.x_dm_below(x), dtype=float))

    def _step_eval(self, vals, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = np.clip(np.searchsorted(self.starts, x, side="right") - 1,
                      0, len(vals) - 1)
        return vals[idx]

    def ensure(self, x, tol, min_terms=0):
        z = abs(self.lam) * self._ms(x)
        if self.lam != 0.0 and z > 300.0:
            raise OverflowGuardError(
                f"tabulated chain gate: lambda*(m.s)(x) = {z:.3g}")
        K = max(1, _terms_needed(float(x), z, np.log(tol),
                                 min_terms=min_terms))
        while len(self.fs) < K and self.exhausted is None:
            f = self.fs[-1]
            vals = np.concatenate(
                ([0.0], np.cumsum(np.asarray(f(self.ts)) * self.ws)))
            if not vals.any():
                self.exhausted = len(self.fs)
                break
            self.mf_vals.append(vals)
            widths = np.diff(self.starts)
            cum = np.concatenate(([0.0], np.cumsum(vals[:-1] * widths)))
            self.fs.append(_PiecewiseLinear(self.starts, cum,
                                            vals[0], vals[-1]))
        self.K = max(self.K, K)
        return K

    def value(self, xs, K=None):
        K = self.K if K is None else K
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        out = xs.copy()
        for k in range(1, min(K, len(self.fs))):
            out = out + self.lam**k * np.asarray(self.fs[k](xs))
        return out

    def deriv(self, xs, K=None):
        K = self.K if K is None else K
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        out = np.ones_like(xs)
        for k in range(1, min(K, len(self.mf_vals) + 1)):
            out = out + self.lam**k * self._step_eval(self.mf_vals[k - 1], xs)
        return out

    def tail1(self, xs, K=None):
        K = self.K if K is None else K
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        out = np.zeros_like(xs)
        for k in range(1, min(K, len(self.fs))):
            out = out + self.lam**k * np.asarray(self.fs[k](xs))
        return out

    def bound(self, x, K=None):
        K = self.K if K is None else K
        if self.exhausted is not None and K >= self.exhausted:
            return 0.0
        return _tail_value(float(x), abs(self.lam) * self._ms(x), K)


class _GridPsiChain:
    """Iterates tabulated on the dense grid of a callable-density string."""

    def __init__(self, string, lam):
        self.string = string
        self.lam = float(lam)
        self.calc = string.calc()
        self._rebuild()

    def _rebuild(self):
        self.tables = [self.calc.xs.copy()]
        self.mtabs = []
        self._ms_table = self.calc.cum_from_zero(self.calc.xs * self.calc.rho)
        self.K = 1

    def _ms(self, x):
        return float(self.calc._interpolant(self._ms_table)(x))

    def ensure(self, x, tol, min_terms=0):
        if x > self.calc.x_max:
            self.calc.ensure_range(float(x))
            self._rebuild()
        z = abs(self.lam) * self._ms(x)
        if self.lam != 0.0 and z > 300.0:
            raise OverflowGuardError(
                f"grid chain gate: lambda*(m.s)(x) = {z:.3g}")
        K = max(1, _terms_needed(float(x), z, np.log(tol),
                                 min_terms=min_terms))
        while len(self.tables) < K:
            mf = self.calc.cum_from_zero(self.tables[-1] * self.calc.rho)
            self.mtabs.append(mf)
            self.tables.append(self.calc.cum_from_zero(mf))
        self.K = max(self.K, K)
        return K

    def value(self, xs, K=None):
        K = self.K if K is None else K
        acc = np.zeros_like(self.calc.xs)
        for k in range(min(K, len(self.tables))):
            acc += self.lam**k * self.tables[k]
        f = self.calc._interpolant(acc)
        return np.atleast_1d(np.asarray(f(np.atleast_1d(xs)), dtype=float))

    def deriv(self, xs, K=None):
        K = self.K if K is None else K
        acc = np.zeros_like(self.calc.xs)
        for k in range(1, min(K, len(self.mtabs) + 1)):
            acc += self.lam**k * self.mtabs[k - 1]
        f = self.calc._interpolant(acc)
        return 1.0 + np.atleast_1d(np.asarray(f(np.atleast_1d(xs)), dtype=float))

    def tail1(self, xs, K=None):
        K = self.K if K is None else K
        acc = np.zeros_like(self.calc.xs)
        for k in range(1, min(K, len(self.tables))):
            acc += self.lam**k * self.tables[k]
        f = self.calc._interpolant(acc)
        return np.atleast_1d(np.asarray(f(np.atleast_1d(xs)), dtype=float))

    def bound(self, x, K=None):
        K = self.K if K is None else K
        return _tail_value(float(x), abs(self.lam) * self._ms(x), K)


def _psi_chain(m: String, lam):
    cache = getattr(m, "_psi_chains", None)
    if cache is None:
        cache = {}
        m._psi_chains = cache
    key = float(lam)
    if key not in cache:
        if hasattr(m, "_mono_density"):
            # unrounded density exponent; the power-log-poly keys are
            # rounded for merging and would drift the chain's exponents
            c, pr = m._mono_density()
            cache[key] = _MonoPsiChain(m, lam, np.log(c), pr)
        elif isinstance(m, TabulatedString):
            cache[key] = _TabPsiChain(m, lam)
        elif m.has_density:
            cache[key] = _GridPsiChain(m, lam)
        else:
            raise ParameterError(
                f"{type(m).__name__} supports no eigenfunction backend")
    return cache[key]


# ---------------------------------------------------------------------------
# public operations


def psi(m: String, lam, x, tol=1e-12, terms=None):
    """First eigenfunction: psi(lam; 0) = 0, psi+(lam; 0) = 1.

    ``terms`` forces the number of series terms; the certified bound then
    reports the majorant tail after that many terms.
    """
    x = float(x)
    if x < 0.0:
        raise ParameterError(f"x must be >= 0, got {x}")
    if x == 0.0:
        return EigenEval(0.0, 1.0, 0.0, 0)
    if lam == 0.0:
        return EigenEval(x, 1.0, 0.0, 1)
    chain = _psi_chain(m, lam)
    K = chain.ensure(x, tol, min_terms=terms or 0)
    if terms is not None:
        K = max(1, min(terms, K))
    value = float(chain.value(x, K)[0])
    deriv = float(chain.deriv(x, K)[0])
    if not np.isfinite(value):
        raise OverflowGuardError("psi exceeded double range")
    return EigenEval(value, deriv, chain.bound(x, K), K)


def g(m: String, lam, x, tol=1e-10):
    """Non-increasing eigenfunction g = psi(x) int_x^infty dy/psi(y)^2.

    g(lam; 0) = 1 by normalization; the formula's derivative is undefined
    at the boundary, so derivative_plus is nan at x = 0.
    """
    if lam <= 0.0:
        raise ParameterError(f"g needs lambda > 0, got {lam}")
    x = float(x)
    if x < 0.0:
        raise ParameterError(f"x must be >= 0, got {x}")
    if x == 0.0:
        return EigenEval(1.0, np.nan, 0.0, 0)
    chain = _psi_chain(m, lam)
    chain.ensure(x, tol)
    psix = float(chain.value(x)[0])
    dpsix = float(chain.deriv(x)[0])
    bpsix = chain.bound(x)

    if isinstance(chain, _TabPsiChain) and len(chain.ts):
        return _g_tab(chain, x, psix, dpsix, bpsix, tol)

    if lam * float(np.asarray(m.x_dm_below(x), dtype=float)) <= 8.0:
        return _g_subtracted(chain, x, psix, dpsix, bpsix, tol)

    big_i, slack = _i_table(chain, tol).i_at(x)
    value = psix * big_i
    deriv = dpsix * big_i - 1.0 / psix
    bound = bpsix * big_i + psix * slack + abs(value) * bpsix / psix
    return EigenEval(value, deriv, bound, chain.K)


def _g_subtracted(chain, x, psix, dpsix, bpsix, tol):
    """Tail integral of psi^-2 against the exact reference integral of y^-2.

    While lambda (m.s)(x) is small psi hugs the identity for many octaves, so
    the plain octave sweep spends its whole error budget reproducing 1/x.
    Writing

        I(x) = 1/x - 1/Y + int_x^Y (psi(y)^-2 - y^-2) dy + R(Y)

    makes the dominant 1/x piece exact; the correction integrand is one-signed
    (psi >= identity) and the remainder brackets as 0 <= R <= 1/(psi+ psi)(Y)
    because 1/(psi+ psi) is an antiderivative bound for psi^-2 under convexity.
    This keeps 1 - g at full relative accuracy, which the scaled strings near
    the fluctuation limit need (g to ~1e-13 absolute at lambda ~ 1e-5).
    """
    def f(y):
        chain.ensure(float(y.max()), tol)
        # psi^-2 - y^-2 through the tail sum P = (psi - y)/y; the direct
        # difference of the two reciprocals turns to noise once P ~ eps
        p = np.asarray(chain.tail1(y), dtype=float) / y
        return -p * (2.0 + p) / ((1.0 + p) ** 2 * y ** 2)

    acc = 0.0
    quad_err = 0.0
    hi = x
    i_run = 1.0 / x
    r_hi = np.inf
    for _ in range(160):
        lo, hi = hi, 2.0 * hi
        edges = np.array([lo, hi])
        p24 = float(panel_values(f, edges, order=24)[0])
        p16 = float(panel_values(f, edges, order=16)[0])
        acc += p24
        quad_err += abs(p24 - p16)
        psiy = float(chain.value(hi)[0])
        dpsiy = float(chain.deriv(hi)[0])
        if not np.isfinite(psiy) or not np.isfinite(dpsiy):
            raise OverflowGuardError("psi exceeded double range")
        r_hi = 1.0 / (dpsiy * psiy)
        i_run = 1.0 / x - 1.0 / hi + acc
        if r_hi <= 0.5 * tol * abs(i_run):
            break
    else:
        raise NonConvergenceError(
            f"tail of int psi^-2 did not close within 160 octaves above {x}")
    big_i = i_run + 0.5 * r_hi
    value = psix * big_i
    deriv = dpsix * big_i - 1.0 / psix
    # quadrature probe + remainder bracket + series error inside the integrand
    slack = quad_err + 0.5 * r_hi + 2.0 * tol * (abs(acc) + 1.0 / x)
    bound = bpsix * big_i + psix * slack + abs(value) * bpsix / psix
    return EigenEval(value, deriv, bound, chain.K)


def _g_tab(chain, x, psix, dpsix, bpsix, tol):
    """Tabulated strings: psi is exactly linear beyond the last atom, so the
    tail integral closes as 1/(psi+(T) psi(T))."""
    T = float(chain.ts[-1])
    if x >= T:
        # no mass beyond T, so g is the constant 1/psi+(T)
        return EigenEval(1.0 / dpsix, 0.0, bpsix / dpsix**2, chain.K)
    chain.ensure(T, tol)
    psiT = float(chain.value(T)[0])
    dpsiT = float(chain.deriv(T)[0])

    def integrand(y):
        return np.asarray(chain.value(y), dtype=float) ** -2.0

    big_i = integrate(integrand, x, T, rel_tol=1e-11) + 1.0 / (dpsiT * psiT)
    value = psix * big_i
    deriv = dpsix * big_i - 1.0 / psix
    bound = (bpsix * big_i + psix * 1e-10 * abs(big_i)
             + abs(value) * bpsix / max(psix, 1e-300))
    return EigenEval(value, deriv, bound, chain.K)


def _phi_conv(u):
    """e^{-u} - 1 + u, stable for small u."""
    return np.expm1(-u) + u


class _WTable:
    """Dyadic ladder of W(y) = int_y^infty (psi(s)^-2 - s^-2) ds.

    Anchored at the top by 0 <= int_Y^infty psi^-2 <= 1/(psi+ psi)(Y)
    (W(Y) = -1/Y + that remainder) and extended one octave panel at a
    time, so every node of an outer quadrature costs a single extra
    panel.  Cached per (string, lambda) chain; the integrand is assembled
    from the series tail and is one-signed, so no depth loses digits.
    """

    def __init__(self, chain):
        self.chain = chain
        self.vals = {}
        self.errs = {}
        self.kmin = None
        self.kmax = None

    def _panel(self, a, b):
        chain = self.chain

        def f(s):
            z = abs(chain.lam) * chain._ms(float(s.max()))
            chain.ensure(float(s.max()), max(1e-280, 1e-13 * s.max() * z))
            p = np.asarray(chain.tail1(s), dtype=float) / s
            return -p * (2.0 + p) / ((1.0 + p) ** 2 * s ** 2)

        edges = np.array([a, b])
        p24 = float(panel_values(f, edges, order=24)[0])
        p16 = float(panel_values(f, edges, order=16)[0])
        return p24, abs(p24 - p16)

    def _closure(self, k):
        chain = self.chain
        y = 2.0 ** k
        chain.ensure(y, 1e-13)
        psiy = float(chain.value(y)[0])
        dpsiy = float(chain.deriv(y)[0])
        if not np.isfinite(psiy) or not np.isfinite(dpsiy):
            raise OverflowGuardError("psi exceeded double range")
        return 1.0 / (psiy * dpsiy)

    def _anchor(self, k0):
        pans = []
        k = k0
        for _ in range(400):
            r = self._closure(k)
            # |W(2^k)| >= 2^-k - r, so this makes the bracket locally
            # relative; a closure relative only to the deeper rungs would
            # leave an absolute error that x * W(x) amplifies at large x
            if r <= 1e-13 * 2.0 ** -k:
                self.vals[k] = -(2.0 ** -k) + 0.5 * r
                self.errs[k] = 0.5 * r
                for kk in range(k - 1, k0 - 1, -1):
                    p, e = pans[kk - k0]
                    self.vals[kk] = self.vals[kk + 1] + p
                    self.errs[kk] = self.errs[kk + 1] + e
                self.kmin, self.kmax = k0, k
                return
            pans.append(self._panel(2.0 ** k, 2.0 ** (k + 1)))
            k += 1
        raise NonConvergenceError(
            "tail of int (psi^-2 - s^-2) did not close within 400 octaves")

    def w_at(self, x):
        k = int(np.ceil(np.log2(x)))
        if 2.0 ** k < x:
            k += 1
        if self.kmin is None:
            self._anchor(k)
        while self.kmin > k:
            p, e = self._panel(2.0 ** (self.kmin - 1), 2.0 ** self.kmin)
            self.vals[self.kmin - 1] = self.vals[self.kmin] + p
            self.errs[self.kmin - 1] = self.errs[self.kmin] + e
            self.kmin -= 1
        while self.kmax < k:
            p, e = self._panel(2.0 ** self.kmax, 2.0 ** (self.kmax + 1))
            self.vals[self.kmax + 1] = self.vals[self.kmax] - p
            self.errs[self.kmax + 1] = self.errs[self.kmax] + e
            self.kmax += 1
        top = 2.0 ** k
        if x == top:
            return self.vals[k], self.errs[k]
        p, e = self._panel(x, top)
        return self.vals[k] + p, self.errs[k] + e


def _w_table(chain):
    tab = getattr(chain, "_wtab", None)
    if tab is None:
        tab = _WTable(chain)
        chain._wtab = tab
    return tab


class _ITable:
    """Dyadic ladder of int_x^infty psi^-2 in the classic (large z) regime.

    Octave panels and the convexity closure 0 <= int_Y^infty psi^-2 <=
    1/(psi+ psi)(Y) are cached per chain, so an outer quadrature that asks
    for g at hundreds of scattered points stops re-integrating the same
    octaves; the deep rungs carry series with thousands of terms and
    dominated the cost of every Laplace-exponent evaluation.  The closure
    depth is still chosen per query, relative to that query's own running
    integral, so accuracy matches the one-shot sweep it replaces.
    """

    def __init__(self, chain, tol):
        self.chain = chain
        self.tol = float(tol)
        self.rtol = min(1e-10, float(tol))
        self.pans = {}
        self.clos = {}

    def _f(self, y):
        chain = self.chain
        chain.ensure(float(y.max()), self.tol)
        v = np.asarray(chain.value(y), dtype=float)
        with np.errstate(over="ignore", divide="ignore"):
            return np.where(np.isfinite(v), v, np.inf) ** -2.0

    def _panel(self, a, b):
        edges = np.array([a, b])
        p24 = float(panel_values(self._f, edges, order=24)[0])
        p16 = float(panel_values(self._f, edges, order=16)[0])
        return p24, abs(p24 - p16)

    def _closure(self, k):
        r = self.clos.get(k)
        if r is None:
            chain = self.chain
            y = 2.0 ** k
            chain.ensure(y, self.tol)
            psiy = float(chain.value(y)[0])
            dpsiy = float(chain.deriv(y)[0])
            if not np.isfinite(psiy) or not np.isfinite(dpsiy):
                raise OverflowGuardError("psi exceeded double range")
            r = 1.0 / (psiy * dpsiy)
            self.clos[k] = r
        return r

    def i_at(self, x):
        """(I(x), slack) where I closes through the convexity bracket."""
        k = int(np.ceil(np.log2(x)))
        if 2.0 ** k < x:
            k += 1
        if x == 2.0 ** k:
            acc, err = 0.0, 0.0
        else:
            acc, err = self._panel(x, 2.0 ** k)
        for _ in range(160):
            r = self._closure(k)
            if r <= 0.5 * self.rtol * acc or r == 0.0:
                return acc + 0.5 * r, err + 0.5 * r + 3.0 * self.rtol * acc
            pan = self.pans.get(k)
            if pan is None:
                pan = self._panel(2.0 ** k, 2.0 ** (k + 1))
                self.pans[k] = pan
            acc += pan[0]
            err += pan[1]
            k += 1
        raise NonConvergenceError(
            f"tail of int psi^-2 did not close within 160 octaves above {x}")


def _i_table(chain, tol):
    tabs = getattr(chain, "_itabs", None)
    if tabs is None:
        tabs = {}
        chain._itabs = tabs
    tab = tabs.get(tol)
    if tab is None:
        tab = _ITable(chain, tol)
        tabs[tol] = tab
    return tab


def _abs_g_slope(m, x, gx):
    # right derivative of |G|; G' = m(x) in the stored normalization
    v = float(np.asarray(m.value(x), dtype=float))
    if gx == 0.0:
        return abs(v)
    return v if gx > 0.0 else -v


def g_excess(m: String, lam, x, tol=1e-12):
    """Centered tail functional g(lam; x) - 1 + lam (-G)(x).

    For a string with m(x, infinity) -> 0 this is E_x[e^{-lam T0} - 1
    + lam T0] >= 0, the quadratic-order remainder of g around its tangent
    at lam = 0; it is the integrand whose j-integral gives the centered
    Laplace exponent of the inverse local time.  The naive difference of
    g and its tangent cancels to noise exactly where the fluctuation
    scaling needs the most accuracy (lam ~ 1e-5, excess ~ lam^2), so the
    evaluation recenters term by term:

        excess = P + (1 + P) x W(x) + lam |G|(x),
        P = (psi(x) - x)/x,    W(x) = int_x^infty (psi^-2 - s^-2) ds,

    where P comes from the series tail (the leading identity term never
    enters) and W from a cached one-signed octave ladder.  The lam-linear
    parts of the three pieces cancel analytically, so double precision
    holds the lam^2 remainder to relative accuracy ~eps * x^{theta-1}/lam.
    """
    if lam < 0.0:
        raise ParameterError(f"g_excess needs lambda >= 0, got {lam}")
    x = float(x)
    if x < 0.0:
        raise ParameterError(f"x must be >= 0, got {x}")
    gx = float(np.asarray(m.G(x), dtype=float))
    if x == 0.0 or lam == 0.0:
        return EigenEval(0.0, 0.0, 0.0, 0)
    chain = _psi_chain(m, lam)

    if isinstance(chain, _TabPsiChain) and len(chain.ts):
        chain.ensure(x, tol)
        psix = float(chain.value(x)[0])
        dpsix = float(chain.deriv(x)[0])
        ev = _g_tab(chain, x, psix, dpsix, chain.bound(x), tol)
        value = ev.value - 1.0 + lam * abs(gx)
        deriv = ev.derivative_plus + lam * _abs_g_slope(m, x, gx)
        slack = 4e-16 * (1.0 + lam * abs(gx))
        return EigenEval(value, deriv, ev.truncation_bound + slack, ev.terms_used)

    # series tolerance pinned to the size of the excess itself, floored by
    # the exact Jensen bound excess >= e^{-lam|G|} - 1 + lam|G|
    est = max(float(_phi_conv(lam * abs(gx))), 1e-300)
    chain.ensure(x, max(1e-280, 0.2 * tol * x * est))
    t1 = float(chain.tail1(x)[0])
    if not np.isfinite(t1):
        raise OverflowGuardError("psi exceeded double range")
    p = t1 / x
    w, werr = _w_table(chain).w_at(x)
    value = p + (1.0 + p) * x * w + lam * abs(gx)
    psix = x + t1
    dpsix = float(chain.deriv(x)[0])
    big_i = 1.0 / x + w
    deriv = dpsix * big_i - 1.0 / psix + lam * _abs_g_slope(m, x, gx)
    bound = (chain.bound(x) / x * (1.0 + abs(x * w))
             + (1.0 + p) * x * werr
             + 4e-16 * (p + abs((1.0 + p) * x * w) + lam * abs(gx)))
    return EigenEval(value, deriv, bound, chain.K)


# ---------------------------------------------------------------------------
# phi^d


def _require_admissible_d(m: String, d):
    if d < 1:
        raise ParameterError(f"d must be >= 1, got {d}")
    try:
        m.calc().int_Gk_dm_01(d)
    except DivergenceError as exc:
        raise ParameterError(
            f"d = {d} lies below the singularity index of the string") from exc


class _PolyPhiChain:
    """phi^d tail iterates (s.m.)^k G^d as signed log power-log sums."""

    def __init__(self, m, d, lam):
        self.m = m
        self.d = d
        self.lam = float(lam)
        calc = m.calc()
        dens_plp = m._plp_pair()[1]
        c, pr = m._mono_density()
        self.lr, self.pr = np.log(c), pr
        self.gd = calc.G_k(d)
        self.B = (self.gd * dens_plp).integral_from_zero()
        self.hs = [_LogPoly.from_plp(self.gd)]
        self.mh = []

    def s_d(self, x):
        # int_0^y G^d dm is monotone in y (G^d has constant sign), so the
        # sup over [0, x] is just the endpoint value
        return abs(float(self.B(np.asarray(x, dtype=float))))

    def _log_extra(self, x):
        return (self.d + 1) * np.log(abs(self.lam)) + np.log(self.s_d(x))

    def ensure(self, x, tol, min_terms=0):
        if self.s_d(x) == 0.0:
            return max(0, min_terms)
        z = abs(self.lam) * float(np.asarray(self.m.x_dm_below(x), float))
        K = _terms_needed(float(x), z, np.log(tol),
                          log_extra=self._log_extra(x), min_terms=min_terms)
        while len(self.hs) < K + 1:
            mh = self.hs[-1].times_power(self.lr, self.pr).int0()
            self.mh.append(mh)
            self.hs.append(mh.int0())
        return K

    def tail_value(self, x, K):
        out = 0.0
        dout = 0.0
        for k in range(1, min(K + 1, len(self.hs))):
            w = self.lam ** (self.d + k)
            out += w * float(self.hs[k].value(x))
            dout += w * float(self.mh[k - 1].value(x))
        return out, dout

    def bound(self, x, K):
        if self.s_d(x) == 0.0:
            return 0.0
        z = abs(self.lam) * float(np.asarray(self.m.x_dm_below(x), float))
        return _tail_value(float(x), z, K, log_extra=self._log_extra(x))


def phi_d(m: String, d: int, lam, x, tol=1e-12, terms=None):
    """Second eigenfunction phi^d = 1 + sum_{k<=d} lam^k G^k + series tail.

    Requires d at least max(d(m), 1); phi^d(lam; 0) = 1.
    """
    _require_admissible_d(m, d)
    x = float(x)
    if x < 0.0:
        raise ParameterError(f"x must be >= 0, got {x}")
    if x == 0.0:
        if lam == 0.0:
            return EigenEval(1.0, 0.0, 0.0, 1)
        m1 = float(np.asarray(m.value(1.0), dtype=float))
        if m.m_zero_finite():
            slope = lam * (float(np.asarray(m.value(1e-300), float)) - m1)
        else:
            slope = -np.inf if lam > 0 else np.inf
        return EigenEval(1.0, slope, 0.0, 0)
    if lam == 0.0:
        return EigenEval(1.0, 0.0, 0.0, 1)

    if m._plp_pair() is not None:
        return _phi_poly(m, d, lam, x, tol, terms)
    if isinstance(m, TabulatedString):
        return _phi_tab(m, d, lam, x, tol, terms)
    return _phi_grid(m, d, lam, x, tol, terms)


def _phi_cache(m, d, lam, factory):
    cache = getattr(m, "_phi_chains", None)
    if cache is None:
        cache = {}
        m._phi_chains = cache
    key = (int(d), float(lam))
    if key not in cache:
        cache[key] = factory()
    return cache[key]


def _phi_poly(m, d, lam, x, tol, terms):
    chain = _phi_cache(m, d, lam, lambda: _PolyPhiChain(m, d, lam))
    K = chain.ensure(x, tol, min_terms=terms or 0)
    if terms is not None:
        K = min(terms, K)
    calc = m.calc()
    m_tilde, dens = m._plp_pair()
    head = 1.0
    dhead = 0.0
    for k in range(1, d + 1):
        head += lam**k * float(calc.G_k(k)(x))
        if k == 1:
            dhead += lam * float(m_tilde(x))
        else:
            # (G^k)'(x) = -int_x^1 G^{k-1} dm, finite for every x > 0
            a = (calc.G_k(k - 1) * dens).integral_to_ref(1.0)
            dhead += lam**k * (-float(a(x)))
    tail, dtail = chain.tail_value(x, K)
    return EigenEval(head + tail, dhead + dtail, chain.bound(x, K), d + K)


class _TabPhiChain:
    def __init__(self, m, d, lam):
        self.m = m
        self.d = d
        self.lam = float(lam)
        self.calc = m.calc()
        self.ts, self.ws = m.atoms()
        self.starts = np.concatenate(([0.0], self.ts))
        self.hs = [self.calc.G_k(d)]
        self.mh_vals = []
        self.exhausted = None

    def s_d(self, x):
        gd = self.hs[0]
        sel = self.ts <= x
        return abs(float((np.asarray(gd(self.ts[sel])) * self.ws[sel]).sum()))

    def _log_extra(self, x):
        return (self.d + 1) * np.log(abs(self.lam)) + np.log(self.s_d(x))

    def ensure(self, x, tol, min_terms=0):
        if self.s_d(x) == 0.0:
            return max(0, min_terms)
        z = abs(self.lam) * float(np.asarray(self.m.x_dm_below(x), float))
        K = _terms_needed(float(x), z, np.log(tol),
                          log_extra=self._log_extra(x), min_terms=min_terms)
        while len(self.hs) < K + 1 and self.exhausted is None:
            f = self.hs[-1]
            vals = np.concatenate(
                ([0.0], np.cumsum(np.asarray(f(self.ts)) * self.ws)))
            if not vals.any():
                self.exhausted = len(self.hs)
                break
            self.mh_vals.append(vals)
            widths = np.diff(self.starts)
            cum = np.concatenate(([0.0], np.cumsum(vals[:-1] * widths)))
            self.hs.append(_PiecewiseLinear(self.starts, cum,
                                            vals[0], vals[-1]))
        return K

    def step_eval(self, vals, x):
        idx = np.clip(np.searchsorted(self.starts, x, side="right") - 1,
                      0, len(vals) - 1)
        return vals[idx]

    def bound(self, x, K):
        if self.exhausted is not None and K >= self.exhausted:
            return 0.0
        if self.s_d(x) == 0.0:
            return 0.0
        z = abs(self.lam) * float(np.asarray(self.m.x_dm_below(x), float))
        return _tail_value(float(x), z, K, log_extra=self._log_extra(x))


def _pl_right_slope(pl: _PiecewiseLinear, x):
    if x < pl.knots[0]:
        return pl.slope_lo
    if x >= pl.knots[-1]:
        return pl.slope_hi
    i = int(np.searchsorted(pl.knots, x, side="right")) - 1
    return (pl.vals[i + 1] - pl.vals[i]) / (pl.knots[i + 1] - pl.knots[i])


def _phi_tab(m, d, lam, x, tol, terms):
    chain = _phi_cache(m, d, lam, lambda: _TabPhiChain(m, d, lam))
    K = chain.ensure(x, tol, min_terms=terms or 0)
    if terms is not None:
        K = min(terms, K)
    calc = m.calc()
    head = 1.0
    dhead = 0.0
    for k in range(1, d + 1):
        gk = calc.G_k(k)
        head += lam**k * float(gk(x))
        dhead += lam**k * _pl_right_slope(gk, x)
    tail = 0.0
    dtail = 0.0
    for k in range(1, min(K + 1, len(chain.hs))):
        w = lam ** (d + k)
        tail += w * float(chain.hs[k](x))
        dtail += w * float(chain.step_eval(chain.mh_vals[k - 1], x))
    return EigenEval(head + tail, dhead + dtail, chain.bound(x, K), d + K)


class _GridPhiChain:
    def __init__(self, m, d, lam):
        self.m = m
        self.d = d
        self.lam = float(lam)
        self.calc = m.calc()
        gd = self.calc.G_k(d)
        self.hs = [gd]
        self.mh = []
        self.B = self.calc.cum_from_zero(gd * self.calc.rho)

    def s_d(self, x):
        return abs(float(self.calc._interpolant(self.B)(x)))

    def _log_extra(self, x):
        return (self.d + 1) * np.log(abs(self.lam)) + np.log(self.s_d(x))

    def ensure(self, x, tol, min_terms=0):
        if x > self.calc.x_max:
            raise ParameterError(
                f"grid backend covers x <= {self.calc.x_max:g}")
        if self.s_d(x) == 0.0:
            return max(0, min_terms)
        z = abs(self.lam) * float(np.asarray(self.m.x_dm_below(x), float))
        K = _terms_needed(float(x), z, np.log(tol),
                          log_extra=self._log_extra(x), min_terms=min_terms)
        while len(self.hs) < K + 1:
            mh = self.calc.cum_from_zero(self.hs[-1] * self.calc.rho)
            self.mh.append(mh)
            self.hs.append(self.calc.cum_from_zero(mh))
        return K

    def bound(self, x, K):
        if self.s_d(x) == 0.0:
            return 0.0
        z = abs(self.lam) * float(np.asarray(self.m.x_dm_below(x), float))
        return _tail_value(float(x), z, K, log_extra=self._log_extra(x))


def _phi_grid(m, d, lam, x, tol, terms):
    chain = _phi_cache(m, d, lam, lambda: _GridPhiChain(m, d, lam))
    K = chain.ensure(x, tol, min_terms=terms or 0)
    if terms is not None:
        K = min(terms, K)
    calc = m.calc()
    head = 1.0
    dhead = 0.0
    for k in range(1, d + 1):
        head += lam**k * float(calc._interpolant(calc.G_k(k))(x))
        if k == 1:
            mt = (np.asarray(m.value(calc.xs), dtype=float)
                  - float(np.asarray(m.value(1.0), float)))
            dhead += lam * float(calc._interpolant(mt)(x))
        else:
            # head-free cumulative: the 0-end divergence cancels in the
            # difference int_1^x G^{k-1} dm
            cum = np.concatenate(([0.0], cumulative_simpson(
                calc.G_k(k - 1) * calc.rho, x=calc.xs)))
            dhead += lam**k * float(
                calc._interpolant(cum - cum[calc.i_one])(x))
    tail = 0.0
    dtail = 0.0
    for k in range(1, min(K + 1, len(chain.hs))):
        w = lam ** (d + k)
        tail += w * float(calc._interpolant(chain.hs[k])(x))
        dtail += w * float(calc._interpolant(chain.mh[k - 1])(x))
    return EigenEval(head + tail, dhead + dtail, chain.bound(x, K), d + K)


# ---------------------------------------------------------------------------
# connection constant, Wronskian, scaling identity


def c_d(m: String, d: int, lam, refs=(1.0, 0.5)):
    """Connection constant in g = phi^d - c^d psi, evaluated at two
    reference points which must agree within certified bounds."""
    if lam <= 0.0:
        raise ParameterError(f"c_d needs lambda > 0, got {lam}")
    vals = []
    tols = []
    for x in refs:
        e_phi = phi_d(m, d, lam, x)
        e_g = g(m, lam, x)
        e_psi = psi(m, lam, x)
        c = (e_phi.value - e_g.value) / e_psi.value
        tol = (e_phi.truncation_bound + e_g.truncation_bound
               + abs(c) * e_psi.truncation_bound) / abs(e_psi.value)
        vals.append(c)
        tols.append(tol)
    spread = abs(vals[0] - vals[1])
    allowance = tols[0] + tols[1] + 1e-8 * (1.0 + abs(vals[0]))
    if spread > allowance:
        raise ConditioningError(
            f"c^{d} disagrees between reference points: {vals[0]:.12g} vs "
            f"{vals[1]:.12g} (allowance {allowance:.3g})")
    return vals[0]


def wronskian(m: String, lam, x):
    """g psi+ - g+ psi, identically 1; returned as a float diagnostic."""
    if lam <= 0.0 or x <= 0.0:
        raise ParameterError("wronskian needs lambda > 0 and x > 0")
    e_g = g(m, lam, x)
    e_psi = psi(m, lam, x)
    return (e_g.value * e_psi.derivative_plus
            - e_g.derivative_plus * e_psi.value)


def scaling_identity_check(m: String, a, b, lam, x):
    """Residuals of the two scaling identities against the transformed
    string value_scale=a, arg_scale=b, with certified bounds attached."""
    if min(a, b, lam, x) <= 0.0:
        raise ParameterError("a, b, lambda, x must all be positive")
    ms = m.scaled(a, b)
    e_g1 = g(m, a * lam, b * x)
    e_g2 = g(ms, b * lam, x)
    e_p1 = psi(m, a * lam, b * x)
    e_p2 = psi(ms, b * lam, x)
    rg = e_g1.value - e_g2.value
    rp = e_p1.value - b * e_p2.value
    bg = (e_g1.truncation_bound + e_g2.truncation_bound
          + 1e-12 * (abs(e_g1.value) + abs(e_g2.value) + 1.0))
    bp = (e_p1.truncation_bound + b * e_p2.truncation_bound
          + 1e-12 * (abs(e_p1.value) + b * abs(e_p2.value) + 1.0))
    return ScalingResiduals(rg, rp, bg, bp)
