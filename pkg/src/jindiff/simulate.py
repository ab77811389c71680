"""Monte Carlo engine: hitting times, inverse local time, occupation times.

Everything here samples paths of the natural-scale diffusion attached to a
string m (generator: take dX = sqrt(2/m'(X)) dW while m has a density), its
first hitting time T0 of zero, and the compensated subordinator

    eta(u) = sum_{u_i <= u} T0_i  +  b_eps * u

built from a Poisson point process with intensity du x j restricted to jump
sizes >= eps.  Small entrance points cannot be sampled (j has infinite mass
near 0), so jumps below eps are replaced by the exact mean drift
b_eps = int_0^eps j(dx) int_0^x m(y,inf) dy; the replacement preserves the
law-of-large-numbers slope E[eta(u)]/u = b exactly.

Three hitting-time schemes
--------------------------
``euler``       Euler steps on dX = sqrt(2/m'(X)) dW with absorption below a
                threshold kill_coeff * sqrt(dt); optionally a Brownian-bridge
                crossing test per step (cfg.bridge).  Biased O(sqrt(dt))-ish;
                the reference scheme for strings with a density.
``chain``       For purely atomic strings: the embedded walk on the atom
                grid.  On natural scale the walk leaves atom y for its left
                or right neighbour with the gambler's-ruin probabilities, and
                the sojourn at y is exponential with mean
                mass({y}) (y-l)(r-y)/(r-l); time accrues nowhere else.  The
                mean of T0 is exact (both share the Green kernel x ^ y).
``local_time``  For any finite-tail string.  Writes the hitting time as
                T0 = (1/2) int L(y) m(dy) where L is the local-time field of
                a standard Brownian motion run from x until it hits 0.  That
                field is a squared Bessel process of dimension 2 below the
                starting point (simulated exactly as W1^2 + W2^2) and of
                dimension 0 above it (the Feller branching diffusion, whose
                transitions are exact Poisson-Gamma mixtures).  Each panel of
                a geometric grid contributes Z(c) * mass(panel) with c the
                panel's m-mass centroid; since the conditional mean of the
                field is linear below x and constant above, the estimator's
                MEAN is exact on any grid - only the fluctuation detail is
                smoothed.  No dt, no step count, no hitting bias: this is the
                default wherever sums of thousands of excursion lifetimes
                must average correctly (eta, occupation, fluctuations).

Reproducibility
---------------
Every replicate owns the counter-based stream
Philox(SeedSequence(seed, spawn_key=(replicate,))) and draws from it in a
fixed documented order, so a run partitioned over any number of workers
reproduces the single-process output bit for bit.  Aggregation never depends
on completion order.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import (BudgetError, DomainError, NonConvergenceError,
                     ParameterError, SchemeUnavailableError)
from .levy import ScalingFamily, b_mean
from .measure import JumpMeasure, String, check_condition_C
from .quadrature import integrate, integrate_zero_singular

__all__ = [
    "SimConfig", "SubordinatorSample", "BilateralSpec", "OccupationSplit",
    "LLNReport", "FluctuationReport", "sample_T0", "sample_T0_batch",
    "sample_eta", "lln_experiment", "sample_occupation",
    "occupation_experiment", "occupation_split", "fluctuation_experiment",
    "small_jump_drift",
]


@dataclass(frozen=True)
class SimConfig:
    """Run parameters shared by all experiments.

    horizon is the step-budget cap for the euler scheme (real time) and the
    default local-time horizon for subordinator runs.  kill_coeff sets the
    euler absorption threshold kill_coeff * sqrt(dt); bridge enables the
    per-step Brownian-bridge crossing test (off by default: it changes the
    stream layout, and the baseline stays deliberately simple).
    """

    seed: int
    replicates: int = 100
    dt: float = 5e-4
    eps_jump: float = 1e-3
    horizon: float = 1e4
    kill_coeff: float = 0.01
    bridge: bool = False

    def __post_init__(self):
        if int(self.replicates) < 1:
            raise ParameterError(
                f"replicates must be >= 1, got {self.replicates}")
        for name in ("dt", "eps_jump", "horizon"):
            if not float(getattr(self, name)) > 0.0:
                raise ParameterError(
                    f"{name} must be positive, got {getattr(self, name)}")
        if self.kill_coeff <= 0.0:
            raise ParameterError(
                f"kill_coeff must be positive, got {self.kill_coeff}")


def _stream(seed, replicate):
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(int(seed),
                                                spawn_key=(int(replicate),))))


# ---------------------------------------------------------------------------
# hitting times


def _kill_level(cfg):
    return cfg.kill_coeff * math.sqrt(cfg.dt)


def _t0_euler(m, x, cfg, gens):
    """One Euler hitting time per generator; paths step in lockstep.

    Each path draws its normals (and bridge uniforms) in blocks from its own
    generator, so the sample attached to generator i is independent of how
    many other paths run alongside it.
    """
    n = len(gens)
    kill = _kill_level(cfg)
    block = 256
    X = np.full(n, float(x))
    t0 = np.zeros(n)
    alive = np.arange(n)
    if x <= kill:
        return t0
    normals = np.empty((n, block))
    unifs = np.empty((n, block)) if cfg.bridge else None
    for i, g in enumerate(gens):
        normals[i] = g.standard_normal(block)
        if cfg.bridge:
            unifs[i] = g.random(block)
    budget = int(math.ceil(cfg.horizon / cfg.dt))
    sqdt = math.sqrt(cfg.dt)
    for step in range(budget):
        col = step % block
        if step and col == 0:
            for i in alive:
                normals[i] = gens[i].standard_normal(block)
                if cfg.bridge:
                    unifs[i] = gens[i].random(block)
        xs = X[alive]
        sig = np.sqrt(2.0 / np.asarray(m.density(xs), dtype=float))
        xn = xs + sig * sqdt * normals[alive, col]
        dead = xn <= kill
        if cfg.bridge:
            # P(min over the step < 0 | endpoints) for the Brownian bridge
            both = ~dead
            p = np.exp(-2.0 * xs[both] * xn[both] / (sig[both] ** 2 * cfg.dt))
            hit = np.zeros_like(dead)
            hit[both] = unifs[alive[both], col] < p
            dead |= hit
        t0[alive[dead]] = (step + 1) * cfg.dt
        X[alive] = xn
        alive = alive[~dead]
        if alive.size == 0:
            return t0
    raise BudgetError(
        f"{alive.size} of {n} paths still above the absorption level after "
        f"{budget} steps (horizon {cfg.horizon}); raise horizon or dt")


def _atom_grid(m):
    atoms = getattr(m, "atoms", None)
    if atoms is None:
        return None
    xs, ws = atoms()
    if len(xs) == 0:
        return None
    return np.asarray(xs, float), np.asarray(ws, float)


def _t0_chain(m, x, rng, n):
    """n hitting times of the embedded atom walk, one shared stream."""
    grid = _atom_grid(m)
    xs, ws = grid
    k = len(xs)
    left = np.concatenate(([0.0], xs[:-1]))
    gap_l = xs - left
    # interior: exp sojourn mean w*(y-l)*(r-y)/(r-l), go left w.p. (r-y)/(r-l)
    mean_hold = np.empty(k)
    p_left = np.empty(k)
    if k > 1:
        r = xs[1:]
        span = r - left[:-1]
        mean_hold[:-1] = ws[:-1] * gap_l[:-1] * (r - xs[:-1]) / span
        p_left[:-1] = (r - xs[:-1]) / span
    mean_hold[-1] = ws[-1] * gap_l[-1]   # nothing above: always returns left
    p_left[-1] = 1.0

    t0 = np.zeros(n)
    # enter the grid: from x the walk first hits a neighbouring atom (or 0)
    idx = np.searchsorted(xs, x)
    if idx == 0:
        state = np.where(rng.random(n) < x / xs[0], 0, -1)
    elif idx >= k or xs[idx] != x:
        lo = xs[idx - 1]
        hi = xs[idx] if idx < k else None
        if hi is None:
            state = np.full(n, k - 1)
        else:
            up = rng.random(n) < (x - lo) / (hi - lo)
            state = np.where(up, idx, idx - 1)
    else:
        state = np.full(n, idx)
    alive = state >= 0
    while np.any(alive):
        s = state[alive]
        t0[alive] += rng.exponential(mean_hold[s])
        goes_left = rng.random(s.size) < p_left[s]
        state[alive] = np.where(goes_left, s - 1, s + 1)
        alive = state >= 0
    return t0


_LT_PER_OCT = 8
_LT_LOW_OCT = 22
_LT_UP_OCT = 64


def _t0_local_time(m, x, rng):
    """Vector of hitting times via the absorbed local-time field."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = x.size
    ratio = 2.0 ** (-1.0 / _LT_PER_OCT)
    rel = ratio ** np.arange(_LT_PER_OCT * _LT_LOW_OCT + 1)
    edges = x[:, None] * rel[None, :]          # descending from x
    tails = np.asarray(m.tail(edges), dtype=float)
    s1 = np.asarray(m.x_dm_below(edges), dtype=float)
    dm = tails[:, 1:] - tails[:, :-1]
    with np.errstate(invalid="ignore"):
        cen = np.where(dm > 0.0,
                       (s1[:, :-1] - s1[:, 1:]) / np.where(dm > 0.0, dm, 1.0),
                       edges[:, 1:])
    cen = cen[:, ::-1]
    dm = dm[:, ::-1]
    # dimension-2 section: a two-dimensional Brownian norm, exact marginals
    nodes = np.concatenate([cen, x[:, None]], axis=1)
    steps = np.diff(np.concatenate([np.zeros((n, 1)), nodes], axis=1), axis=1)
    np.maximum(steps, 0.0, out=steps)          # guards centroid float noise
    sd = np.sqrt(steps)
    w1 = np.cumsum(rng.standard_normal((n, nodes.shape[1])) * sd, axis=1)
    w2 = np.cumsum(rng.standard_normal((n, nodes.shape[1])) * sd, axis=1)
    z = w1 ** 2 + w2 ** 2
    t0 = 0.5 * np.sum(z[:, :-1] * dm, axis=1)
    # the un-gridded sliver below x*2^-22 enters by its exact mean
    t0 += np.asarray(m.x_dm_below(edges[:, -1]), dtype=float)

    # dimension-0 section above x: Poisson-Gamma branching transitions
    zc = z[:, -1].copy()
    prev = x.copy()
    lo = x.copy()
    alive = zc > 0.0
    up = 2.0 ** (1.0 / _LT_PER_OCT)
    for _ in range(_LT_PER_OCT * _LT_UP_OCT):
        if not np.any(alive):
            return t0
        hi = lo * up
        a = np.where(alive)[0]
        tl_lo = np.asarray(m.tail(lo[a]), dtype=float)
        tl_hi = np.asarray(m.tail(hi[a]), dtype=float)
        dma = tl_lo - tl_hi
        ds1 = (np.asarray(m.x_dm_below(hi[a]), dtype=float)
               - np.asarray(m.x_dm_below(lo[a]), dtype=float))
        cena = np.where(dma > 0.0, ds1 / np.where(dma > 0.0, dma, 1.0),
                        0.5 * (lo[a] + hi[a]))
        h = np.maximum(cena - prev[a], 1e-300)
        znew = rng.gamma(rng.poisson(zc[a] / (2.0 * h)).astype(float), 2.0 * h)
        t0[a] += 0.5 * znew * dma
        zc[a] = znew
        prev[a] = cena
        alive[a] = znew > 0.0
        lo = hi
    a = np.where(alive)[0]
    # forced stop: the field is a nonnegative martingale above x, so the
    # unreached tail enters by its conditional mean
    t0[a] += 0.5 * zc[a] * np.asarray(m.tail(lo[a]), dtype=float)
    return t0


def _pick_scheme(m, scheme):
    if scheme is not None:
        if scheme not in ("euler", "chain", "local_time"):
            raise ParameterError(f"unknown scheme {scheme!r}")
        return scheme
    if m.has_density:
        return "euler"
    if _atom_grid(m) is not None:
        return "chain"
    raise SchemeUnavailableError(
        "string has neither a density (euler steps) nor an atom grid "
        "(embedded chain); no path scheme applies")


def _require_local_time_ready(m):
    if not m.finite_tail:
        raise SchemeUnavailableError(
            "the local-time scheme integrates the field against the tail "
            "mass m(y, inf), which this string does not have finite")


def sample_T0(m: String, x, cfg: SimConfig, replicate=0, scheme=None):
    """One hitting time of 0 from x, drawn from the replicate's stream."""
    if float(x) <= 0.0:
        raise DomainError(f"start point must be positive, got {x}")
    scheme = _pick_scheme(m, scheme)
    rng = _stream(cfg.seed, replicate)
    if scheme == "euler":
        return float(_t0_euler(m, float(x), cfg, [rng])[0])
    if scheme == "chain":
        return float(_t0_chain(m, float(x), rng, 1)[0])
    _require_local_time_ready(m)
    return float(_t0_local_time(m, np.full(1, float(x)), rng)[0])


def sample_T0_batch(m: String, x, cfg: SimConfig, scheme=None):
    """One hitting time per replicate, each from its own stream."""
    if float(x) <= 0.0:
        raise DomainError(f"start point must be positive, got {x}")
    scheme = _pick_scheme(m, scheme)
    n = int(cfg.replicates)
    gens = [_stream(cfg.seed, r) for r in range(n)]
    if scheme == "euler":
        return _t0_euler(m, float(x), cfg, gens)
    if scheme == "chain":
        return np.array([_t0_chain(m, float(x), g, 1)[0] for g in gens])
    _require_local_time_ready(m)
    return np.array([_t0_local_time(m, np.full(1, float(x)), g)[0]
                     for g in gens])


# ---------------------------------------------------------------------------
# the compensated subordinator


def _mean_hit(m, x):
    """E_x[T0] = int_0^x m(y,inf) dy, via the integrated string."""
    return np.abs(np.asarray(m.G(x), dtype=float))


def small_jump_drift(m: String, j: JumpMeasure, eps, rel_tol=1e-10):
    """b_eps = int_0^eps E_x[T0] j(dx), the compensation drift rate.

    This same number bounds the slope contribution of the discarded jumps,
    so it doubles as the reported truncation-bias bound.
    """
    if not eps > 0.0:
        raise ParameterError(f"eps must be positive, got {eps}")

    def f(x):
        return _mean_hit(m, x) * j.density(x)

    cuts = sorted(b for b in j.breakpoints() if 0.0 < b < eps)
    lo = cuts[0] if cuts else eps
    total = integrate_zero_singular(f, lo, rel_tol=rel_tol, abs_tol=0.0).value
    edges = cuts + [eps]
    for a, b in zip(edges[:-1], edges[1:]):
        total += integrate(f, a, b, rel_tol=rel_tol)
    return total


def _sample_sizes(j, eps, n, rng):
    """n draws from j restricted to (eps, inf), by tail inversion."""
    if n == 0:
        return np.empty(0)
    mass = float(j.tail(eps))
    targets = rng.random(n) * mass
    lo = np.full(n, float(eps))
    hi = np.full(n, max(2.0 * eps, 2.0))
    # bracket: push hi out until the tail drops below every target
    for _ in range(200):
        need = np.asarray(j.tail(hi), dtype=float) >= targets
        if not np.any(need):
            break
        hi[need] *= 4.0
    else:
        raise NonConvergenceError("could not bracket the jump-size quantile")
    for _ in range(90):
        mid = np.sqrt(lo * hi)
        high_side = np.asarray(j.tail(mid), dtype=float) > targets
        lo[high_side] = mid[high_side]
        hi[~high_side] = mid[~high_side]
    return np.sqrt(lo * hi)


@dataclass
class SubordinatorSample:
    """One realized inverse-local-time path on [0, horizon]."""

    jump_times: np.ndarray     # ascending points of local time
    lifetimes: np.ndarray      # matching excursion lengths T0_i
    drift_rate: float          # b_eps, the small-jump compensation
    horizon: float
    eps: float
    replicate: int = 0
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if np.any(np.diff(self.jump_times) < 0.0):
            raise ParameterError("jump times must be ascending")
        if np.any(self.lifetimes < 0.0) or self.drift_rate < 0.0:
            raise ParameterError("lifetimes and drift must be nonnegative")
        self._cum = np.concatenate(([0.0], np.cumsum(self.lifetimes)))

    def eta(self, u):
        """Path value; right-continuous, jumps included at their times."""
        u = np.asarray(u, dtype=float)
        idx = np.searchsorted(self.jump_times, u, side="right")
        out = self._cum[idx] + self.drift_rate * u
        return float(out) if out.ndim == 0 else out

    @property
    def slope(self):
        return self.eta(self.horizon) / self.horizon


def sample_eta(m: String, j: JumpMeasure, cfg: SimConfig, replicate=0,
               scheme="local_time", drift=None):
    """One compensated-subordinator path over local time [0, cfg.horizon].

    Draw order per replicate stream: point count, point times, jump sizes,
    then the lifetimes; this order is part of the reproducibility contract.
    """
    if not m.finite_tail:
        raise ParameterError(
            "eta needs a positive recurrent string (finite tail mass)")
    eps = cfg.eps_jump
    b_eps = small_jump_drift(m, j, eps) if drift is None else float(drift)
    rng = _stream(cfg.seed, replicate)
    mass = float(j.tail(eps))
    count = int(rng.poisson(mass * cfg.horizon))
    times = np.sort(rng.random(count) * cfg.horizon)
    sizes = _sample_sizes(j, eps, count, rng)
    if scheme == "local_time":
        _require_local_time_ready(m)
        lives = _t0_local_time(m, sizes, rng) if count else np.empty(0)
    elif scheme == "euler":
        lives = np.array([_t0_euler(m, s, cfg, [rng])[0] for s in sizes])
    elif scheme == "chain":
        lives = _t0_chain(m, None, rng, 0) if count == 0 else np.array(
            [_t0_chain(m, s, rng, 1)[0] for s in sizes])
    else:
        raise ParameterError(f"unknown scheme {scheme!r}")
    return SubordinatorSample(times, lives, b_eps, cfg.horizon, eps,
                              replicate=replicate)


# ---------------------------------------------------------------------------
# replicate fan-out


def _run_replicates(task, payloads, workers):
    if workers is None or int(workers) <= 1:
        return [task(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=int(workers)) as pool:
        chunk = max(1, len(payloads) // (4 * int(workers)))
        return list(pool.map(task, payloads, chunksize=chunk))


def _lln_one(payload):
    m, j, cfg, rep, scheme, b_eps = payload
    sample = sample_eta(m, j, cfg, replicate=rep, scheme=scheme, drift=b_eps)
    return sample.slope


@dataclass
class LLNReport:
    slopes: np.ndarray
    b: float            # the quadrature drift int E_x[T0] j(dx)
    b_eps: float        # compensation rate == reported truncation-bias bound
    mean: float
    se: float

    @property
    def within(self):
        """|mean - b| measured in standard errors."""
        return abs(self.mean - self.b) / self.se if self.se > 0 else math.inf


def lln_experiment(m: String, j: JumpMeasure, cfg: SimConfig, workers=1,
                   scheme="local_time"):
    """Replicate slopes eta(horizon)/horizon against the exact drift b."""
    b = b_mean(m, j)
    b_eps = small_jump_drift(m, j, cfg.eps_jump)
    payloads = [(m, j, cfg, rep, scheme, b_eps)
                for rep in range(cfg.replicates)]
    slopes = np.array(_run_replicates(_lln_one, payloads, workers))
    se = (slopes.std(ddof=1) / math.sqrt(len(slopes))
          if len(slopes) > 1 else math.inf)
    return LLNReport(slopes, b, b_eps, float(slopes.mean()), float(se))


# ---------------------------------------------------------------------------
# bilateral occupation times


@dataclass
class BilateralSpec:
    """Two (string, jumping-in) pairs driving one bilateral process."""

    m_plus: String
    j_plus: JumpMeasure
    m_minus: String
    j_minus: JumpMeasure
    w_plus: float = None
    w_minus: float = None
    r_plus: float = None
    r_minus: float = None

    def __post_init__(self):
        for tag, m, j in (("+", self.m_plus, self.j_plus),
                          ("-", self.m_minus, self.j_minus)):
            report = check_condition_C(m, j)
            if not report.holds:
                raise ParameterError(
                    f"the {tag} pair fails the existence conditions: "
                    f"{report.witnesses}")

    def p(self):
        """Limit fraction of time on the positive side, b+/(b+ + b-)."""
        bp = b_mean(self.m_plus, self.j_plus)
        bm = b_mean(self.m_minus, self.j_minus)
        return bp / (bp + bm)


@dataclass
class OccupationSplit:
    positive: float
    negative: float

    @property
    def total(self):
        return self.positive + self.negative


def occupation_split(plus: SubordinatorSample, minus: SubordinatorSample,
                     t) -> OccupationSplit:
    """Split real time t into the two sides' occupation, from two paths.

    The processes alternate along a common local time; real time is
    eta_+(u) + eta_-(u).  Inside a jump the clock belongs wholly to that
    jump's side; inside the drift it splits at the compensation ratio (the
    sub-eps excursions are only represented in the mean).
    """
    t = float(t)
    if t < 0.0:
        raise ParameterError(f"t must be >= 0, got {t}")
    drift = plus.drift_rate + minus.drift_rate
    share = plus.drift_rate / drift if drift > 0.0 else 0.0
    u = np.concatenate([plus.jump_times, minus.jump_times])
    size = np.concatenate([plus.lifetimes, minus.lifetimes])
    pos = np.concatenate([np.ones(len(plus.jump_times), dtype=bool),
                          np.zeros(len(minus.jump_times), dtype=bool)])
    order = np.argsort(u, kind="stable")
    u, size, pos = u[order], size[order], pos[order]
    before = drift * u + np.concatenate(([0.0], np.cumsum(size)))[:-1]
    after = before + size
    k = int(np.searchsorted(after, t, side="left"))
    if k == len(u):
        horizon = min(plus.horizon, minus.horizon)
        if t > (after[-1] if len(u) else 0.0) + drift * horizon - (
                drift * u[-1] if len(u) else 0.0):
            raise ParameterError(
                f"t = {t} exceeds the simulated span; extend the horizon")
        # t lands in the trailing drift stretch
        u_last = u[-1] if len(u) else 0.0
        cum_last = after[-1] if len(u) else 0.0
        u_c = u_last + (t - cum_last) / drift
        a = share * drift * u_c + float(np.sum(size[pos]))
        return OccupationSplit(a, t - a)
    plus_cum = float(np.sum(size[: k][pos[: k]]))
    if before[k] >= t:
        # crossing happens inside a drift gap
        u_c = (t - (before[k] - drift * u[k])) / drift if drift > 0 else u[k]
        a = share * drift * u_c + plus_cum
    else:
        # crossing happens inside jump k
        a = share * drift * u[k] + plus_cum
        if pos[k]:
            a += t - before[k]
    return OccupationSplit(a, t - a)


def sample_occupation(bi: BilateralSpec, t, cfg: SimConfig, replicate=0,
                      scheme="local_time", _rates=None):
    """A(t) and t - A(t) for one replicate of the bilateral process.

    The two sides use independent substreams (2*replicate, 2*replicate+1);
    the local-time horizon grows geometrically until real time t is covered.
    """
    if _rates is None:
        bp = b_mean(bi.m_plus, bi.j_plus)
        bm = b_mean(bi.m_minus, bi.j_minus)
        dp = small_jump_drift(bi.m_plus, bi.j_plus, cfg.eps_jump)
        dm = small_jump_drift(bi.m_minus, bi.j_minus, cfg.eps_jump)
    else:
        bp, bm, dp, dm = _rates
    horizon = 1.5 * float(t) / (bp + bm)
    for _ in range(8):
        run = SimConfig(seed=cfg.seed, replicates=1, dt=cfg.dt,
                        eps_jump=cfg.eps_jump, horizon=horizon,
                        kill_coeff=cfg.kill_coeff, bridge=cfg.bridge)
        sp = sample_eta(bi.m_plus, bi.j_plus, run,
                        replicate=2 * replicate, scheme=scheme, drift=dp)
        sm = sample_eta(bi.m_minus, bi.j_minus, run,
                        replicate=2 * replicate + 1, scheme=scheme, drift=dm)
        if sp.eta(horizon) + sm.eta(horizon) >= t:
            return occupation_split(sp, sm, t)
        horizon *= 2.0
    raise NonConvergenceError(
        f"real time {t} not reached within 8 horizon doublings")


def _occupation_one(payload):
    bi, t, cfg, rep, scheme, rates = payload
    return sample_occupation(bi, t, cfg, replicate=rep, scheme=scheme,
                             _rates=rates).positive / float(t)


def occupation_experiment(bi: BilateralSpec, t, cfg: SimConfig, workers=1,
                          scheme="local_time"):
    """Replicate values of A(t)/t with the predicted limit fraction.

    Returns (ratios, p, mean, se).
    """
    bp = b_mean(bi.m_plus, bi.j_plus)
    bm = b_mean(bi.m_minus, bi.j_minus)
    dp = small_jump_drift(bi.m_plus, bi.j_plus, cfg.eps_jump)
    dm = small_jump_drift(bi.m_minus, bi.j_minus, cfg.eps_jump)
    rates = (bp, bm, dp, dm)
    payloads = [(bi, t, cfg, rep, scheme, rates)
                for rep in range(cfg.replicates)]
    ratios = np.array(_run_replicates(_occupation_one, payloads, workers))
    se = (ratios.std(ddof=1) / math.sqrt(len(ratios))
          if len(ratios) > 1 else math.inf)
    return ratios, bp / (bp + bm), float(ratios.mean()), float(se)


# ---------------------------------------------------------------------------
# fluctuations around the law of large numbers


@dataclass
class FluctuationReport:
    gamma: float
    t_grid: tuple
    z: np.ndarray              # replicates x len(t_grid)
    means: np.ndarray
    ses: np.ndarray
    var_ratios: dict           # (t, 2t) -> (ratio, se)
    incr_corrs: dict           # (t1, t2) -> (corr, se)
    ks: dict                   # t -> KS distance of z/sqrt(2 t) vs normal


def _fluct_one(payload):
    fam_m, fam_j, cfg, rep, scheme, b_eps, u_grid = payload
    run = SimConfig(seed=cfg.seed, replicates=1, dt=cfg.dt,
                    eps_jump=cfg.eps_jump, horizon=float(u_grid[-1]),
                    kill_coeff=cfg.kill_coeff, bridge=cfg.bridge)
    sample = sample_eta(fam_m, fam_j, run, replicate=rep, scheme=scheme,
                        drift=b_eps)
    return sample.eta(np.asarray(u_grid))


def _ks_normal(z):
    from scipy.special import erf
    z = np.sort(np.asarray(z, dtype=float))
    n = z.size
    cdf = 0.5 * (1.0 + erf(z / math.sqrt(2.0)))
    hi = np.arange(1, n + 1) / n - cdf
    lo = cdf - np.arange(0, n) / n
    return float(max(hi.max(), lo.max()))


def fluctuation_experiment(fam: ScalingFamily, gamma, t_grid, cfg: SimConfig,
                           workers=1, scheme="local_time"):
    """Normalized fluctuations of the inverse local time at scale gamma.

    Per replicate and per t in t_grid,

        Z(t) = [eta(gamma t / v(s)) - b gamma t / v(s)] / (sqrt(gamma) u(s)),

    with s = gamma^(alpha/2) and eta the compensated subordinator of the
    family's base pair.  The summary reports the Brownian-limit signatures:
    means near 0, Var[Z(2t)]/Var[Z(t)] near 2, vanishing increment
    correlations, and the KS distance of Z(t)/sqrt(2t) from standard normal.
    """
    gamma = float(gamma)
    if gamma <= 1.0:
        raise ParameterError(f"gamma must exceed 1, got {gamma}")
    t_grid = tuple(float(t) for t in t_grid)
    if not t_grid or any(t <= 0 for t in t_grid) or list(t_grid) != sorted(t_grid):
        raise ParameterError("t_grid must be ascending positive times")
    s = fam.gamma_arg(gamma)
    u_s, v_s = float(fam.u(s)), float(fam.v(s))
    u_grid = tuple(gamma * t / v_s for t in t_grid)
    b = fam.b
    b_eps = small_jump_drift(fam.m, fam.j, cfg.eps_jump)
    payloads = [(fam.m, fam.j, cfg, rep, scheme, b_eps, u_grid)
                for rep in range(cfg.replicates)]
    rows = _run_replicates(_fluct_one, payloads, workers)
    denom = math.sqrt(gamma) * u_s
    z = (np.vstack(rows) - b * np.asarray(u_grid)[None, :]) / denom
    n = z.shape[0]
    means = z.mean(axis=0)
    ses = z.std(axis=0, ddof=1) / math.sqrt(n)
    var_ratios = {}
    for i, t in enumerate(t_grid):
        for k, t2 in enumerate(t_grid):
            if abs(t2 - 2.0 * t) <= 1e-12 * t:
                a = z[:, i] ** 2
                c = z[:, k] ** 2
                am, cm = a.mean(), c.mean()
                grad = np.array([1.0 / am, -cm / am ** 2])
                cov = np.cov(np.vstack([c, a]))
                se = math.sqrt(grad @ cov @ grad / n)
                var_ratios[(t, t2)] = (float(cm / am), float(se))
    incr_corrs = {}
    for i in range(len(t_grid) - 1):
        inc = z[:, i + 1] - z[:, i]
        corr = float(np.corrcoef(z[:, i], inc)[0, 1])
        incr_corrs[(t_grid[i], t_grid[i + 1])] = (
            corr, 1.0 / math.sqrt(max(n - 3, 1)))
    ks = {t: _ks_normal(z[:, i] / math.sqrt(2.0 * t))
          for i, t in enumerate(t_grid)}
    return FluctuationReport(gamma, t_grid, z, means, ses, var_ratios,
                             incr_corrs, ks)
