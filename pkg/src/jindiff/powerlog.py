"""Exact calculus on finite sums of c * x^p * (log x)^q.

Strings in the power and constant-density families keep every quantity the
library derives from them (iterated integrals against dx and dm, series
iterates) inside this class of functions, so those pipelines can run on exact
closed forms instead of grids.  Antiderivatives stay in the class: the p=-1
case bumps the log power, everything else integrates by parts.
"""

import numpy as np

# exponents are canonicalized to this many decimals so that terms produced by
# different arithmetic paths merge instead of accumulating as near-duplicates
_EXP_DECIMALS = 10
_COEF_FLOOR = 1e-300


def _key(p, q):
    return (round(float(p), _EXP_DECIMALS), int(q))


class PowerLogPoly:
    """Finite sum  sum_i  c_i * x^{p_i} * (log x)^{q_i}  on (0, inf)."""

    __slots__ = ("terms",)

    def __init__(self, terms=None):
        self.terms = {}
        if terms:
            for (p, q), c in terms.items():
                self._add_term(c, p, q)

    @classmethod
    def term(cls, c, p, q=0):
        out = cls()
        out._add_term(c, p, q)
        return out

    @classmethod
    def zero(cls):
        return cls()

    def _add_term(self, c, p, q):
        if c == 0.0:
            return
        k = _key(p, q)
        new = self.terms.get(k, 0.0) + c
        if abs(new) < _COEF_FLOOR:
            self.terms.pop(k, None)
        else:
            self.terms[k] = new

    def __add__(self, other):
        out = PowerLogPoly()
        out.terms = dict(self.terms)
        for (p, q), c in other.terms.items():
            out._add_term(c, p, q)
        return out

    def __neg__(self):
        out = PowerLogPoly()
        out.terms = {k: -c for k, c in self.terms.items()}
        return out

    def __sub__(self, other):
        return self + (-other)

    def scale(self, a):
        out = PowerLogPoly()
        if a != 0.0:
            out.terms = {k: a * c for k, c in self.terms.items()}
        return out

    def times_power(self, a, s):
        """Multiply by a * x^s."""
        out = PowerLogPoly()
        for (p, q), c in self.terms.items():
            out._add_term(a * c, p + s, q)
        return out

    def __mul__(self, other):
        out = PowerLogPoly()
        for (p1, q1), c1 in self.terms.items():
            for (p2, q2), c2 in other.terms.items():
                out._add_term(c1 * c2, p1 + p2, q1 + q2)
        return out

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        if self.terms:
            lx = np.log(x)
            for (p, q), c in self.terms.items():
                t = c * x**p
                if q:
                    t = t * lx**q
                out += t
        return out if out.ndim else float(out)

    def antiderivative(self):
        """A PowerLogPoly F with F' = self (no constant of integration).

        Every term integrates in closed form:  p = -1 bumps the log power,
        otherwise integration by parts walks the log power down to zero.
        """
        out = PowerLogPoly()
        for (p, q), c in self.terms.items():
            if abs(p + 1.0) < 10.0**-_EXP_DECIMALS:
                out._add_term(c / (q + 1.0), 0.0, q + 1)  # x^0 log^{q+1}
                continue
            # recurrence: I(p,q) = x^{p+1} log^q / (p+1) - q/(p+1) I(p, q-1)
            coef = c
            qq = q
            while qq > 0:
                out._add_term(coef / (p + 1.0), p + 1.0, qq)
                coef = -coef * qq / (p + 1.0)
                qq -= 1
            out._add_term(coef / (p + 1.0), p + 1.0, 0)
        return out

    def value_at_one(self):
        # log 1 = 0 wipes every q >= 1 term
        return sum(c for (p, q), c in self.terms.items() if q == 0)

    def integral_from_zero(self):
        """The PowerLogPoly x -> int_0^x self(t) dt.

        Requires every antiderivative term to vanish at 0+, i.e. original
        exponents p > -1; otherwise the integral diverges.
        """
        if self.terms and min(p for p, _ in self.terms) <= -1.0 + 10.0**-_EXP_DECIMALS:
            raise ValueError(
                f"integral from 0 diverges: minimal exponent "
                f"{min(p for p, _ in self.terms)} <= -1"
            )
        return self.antiderivative()

    def integral_to_ref(self, ref=1.0):
        """The PowerLogPoly y -> int_y^ref self(t) dt (signed for y > ref)."""
        F = self.antiderivative()
        if ref == 1.0:
            const = F.value_at_one()
        else:
            const = float(F(ref))
        return PowerLogPoly.term(const, 0.0) - F

    def min_exponent(self):
        return min((p for p, _ in self.terms), default=np.inf)

    def __repr__(self):
        bits = [f"{c:+.6g}*x^{p}" + (f"*log^{q}" if q else "")
                for (p, q), c in sorted(self.terms.items())]
        return "PLP(" + " ".join(bits) + ")" if bits else "PLP(0)"
