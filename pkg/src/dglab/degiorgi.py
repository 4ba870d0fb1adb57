"""
De Giorgi iteration machinery on discrete space-time functions.

Integrals are sums against the product measure ``mu x dt``; cylinders
``B(x0, r) x (t_lo, t_hi]`` contain the frames with ``t_lo < t_k <= t_hi``,
and "ess sup / ess inf" are maxima and minima over the nodes and frames of a
set. The module covers truncations, intrinsic time scaling, the energy
inequality check, iteration traces and their recursion fits, the fast
geometric convergence lemma, the two alternatives and the multi-round
oscillation reduction with a Hölder-exponent fit.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .calculus import SpaceTimeFunction, upper_gradient
from .errors import DataCorruptionError, DegenerateError, MarginError, ReductionFailure
from .space import ball

_TTOL = 1e-9


# --------------------------------------------------------------- scaling

def truncate(u, k, sign):
    """``(u - k)_+`` for ``sign="plus"``, ``(u - k)_-`` for ``sign="minus"``.

    Accepts arrays or a :class:`SpaceTimeFunction` (returned as the same type).
    """
    if isinstance(u, SpaceTimeFunction):
        return u.with_frames(truncate(u.frames, k, sign))
    u = np.asarray(u, dtype=float)
    if sign == "plus":
        return np.maximum(u - k, 0.0)
    if sign == "minus":
        return np.maximum(k - u, 0.0)
    raise ValueError(f"sign must be 'plus' or 'minus', got {sign!r}")


@dataclass
class ScalingParams:
    """Intrinsic scaling ``theta_pm = (osc / gamma_pm)^(2-p)`` with ``gamma_- = 2``, ``gamma_+ = 2^lam``."""

    osc: float
    lam: int
    p: float
    ess_inf: float = 0.0
    epsilon: float | None = None
    s: int | None = None

    @property
    def gamma_minus(self):
        return 2.0

    @property
    def gamma_plus(self):
        return 2.0 ** self.lam

    @property
    def theta_minus(self):
        return (self.osc / self.gamma_minus) ** (2 - self.p)

    @property
    def theta_plus(self):
        return (self.osc / self.gamma_plus) ** (2 - self.p)

    @property
    def ess_sup(self):
        return self.ess_inf + self.osc

    def theta(self, sign):
        return self.theta_plus if sign == "plus" else self.theta_minus

    def with_lambda(self, lam):
        return ScalingParams(self.osc, int(lam), self.p, self.ess_inf, self.epsilon, self.s)

    def to_dict(self):
        d = asdict(self)
        d.update(theta_minus=self.theta_minus, theta_plus=self.theta_plus,
                 gamma_minus=self.gamma_minus, gamma_plus=self.gamma_plus)
        return d


def theta_scaling(osc, lam, p, ess_inf=0.0):
    """Scaling parameters for oscillation ``osc``; ``osc`` must be positive."""
    if not osc > 0:
        raise DegenerateError("oscillation must be positive; a constant function is trivially continuous")
    if p <= 2:
        raise ValueError("intrinsic scaling needs p > 2")
    if lam < 1 or int(lam) != lam:
        raise ValueError("lambda must be an integer >= 1")
    return ScalingParams(float(osc), int(lam), float(p), float(ess_inf))


# -------------------------------------------------------------- cylinders

@dataclass
class Cylinder:
    """``B(center, radius) x (t_start, t_end]`` restricted to the frames of a trajectory."""

    center: int
    radius: float
    t_start: float
    t_end: float
    members: np.ndarray = field(repr=False)
    frames: np.ndarray = field(repr=False)
    ball_measure: float
    time_step: float

    @property
    def measure(self):
        return self.ball_measure * len(self.frames) * self.time_step

    def values(self, u):
        return u.frames[np.ix_(self.frames, self.members)]


def frames_between(u, t_lo, t_hi):
    """Indices of frames with ``t_lo < t_k <= t_hi``."""
    t = u.times
    tol = _TTOL * u.time_step
    return np.flatnonzero((t > t_lo + tol) & (t <= t_hi + tol))


def snap_time(u, t):
    """Time of the last frame at or before ``t``."""
    return float(u.times[u.frame_index(t)])


def cylinder(u, center, radius, t_lo, t_hi, check_margin=True):
    """Build a :class:`Cylinder`; raises :class:`MarginError` if it leaves the trajectory."""
    tol = _TTOL * u.time_step
    if check_margin and (t_lo < u.t_start - tol or t_hi > u.t_end + tol):
        raise MarginError(
            f"cylinder ({t_lo:.6g}, {t_hi:.6g}] leaves the trajectory [{u.t_start:.6g}, {u.t_end:.6g}]",
            required=t_lo, available=u.t_start)
    B = ball(u.space, center, radius)
    fr = frames_between(u, t_lo, t_hi)
    if len(fr) == 0:
        fr = np.array([u.frame_index(t_hi)])
    return Cylinder(int(center), float(radius), float(t_lo), float(t_hi), B.members, fr, B.measure,
                    u.time_step)


def level_set_measure(u, cyl, k, sign, strict=True):
    """``nu({(u - k)_pm > 0} cap Q)`` (or ``>= 0`` with ``strict=False``, i.e. ``u <= k`` for minus)."""
    vals = cyl.values(u)
    if sign == "plus":
        hit = vals > k if strict else vals >= k
    else:
        hit = vals < k if strict else vals <= k
    w = u.space.weights[cyl.members]
    return float(hit.sum(axis=0) @ w) * u.time_step


def essential_range(u, center, radius, t_lo, t_hi):
    cyl = cylinder(u, center, radius, t_lo, t_hi, check_margin=False)
    vals = cyl.values(u)
    if vals.size == 0:
        raise DegenerateError("empty cylinder")
    return float(vals.min()), float(vals.max())


# -------------------------------------------------------------- DGC check

@dataclass
class DGCResult:
    C: float
    lhs: float
    rhs_space: float
    rhs_time: float
    sup_term: float
    energy_term: float
    witness: dict | None = None

    def __float__(self):
        return float(self.C)


def dgc_check(u, x0, r1, r2, tau2, tau1, tau0, k, sign, variant="full", p=3.0):
    """Smallest constant making the energy inequality hold for one instance.

    LHS = max_{tau1 < t <= tau0} sum_{B(r1)} (u-k)^2 dmu + sum_{(tau1, tau0]} sum_{B(r1)} g^p dnu,
    where ``g`` is the node gradient of the truncation. The right-hand side is
    ``(r2-r1)^-p sum_{(tau2,tau0]} sum_{B(r2)} (u-k)^p dnu + (tau1-tau2)^-1 sum_{(tau2,tau1]} sum_{B(r2)} (u-k)^2 dnu``
    for ``variant="full"``. The ``"limit"`` variant replaces the second term
    with ``sum_{B(r2)} (u(tau1)-k)^2 dmu`` and the first time range by ``(tau1, tau0]``.
    ``C = LHS / RHS``, with ``0/0 = 0`` and ``x/0 = inf``.
    """
    if not (0 < r1 < r2):
        raise ValueError("need 0 < r1 < r2")
    if not (tau2 < tau1 < tau0):
        raise ValueError("need tau2 < tau1 < tau0")
    if variant not in ("full", "limit"):
        raise ValueError(f"unknown variant {variant!r}")
    space = u.space
    c1 = cylinder(u, x0, r1, tau1, tau0)
    lo = tau1 if variant == "limit" else tau2
    c2 = cylinder(u, x0, r2, lo, tau0)
    dt = u.time_step
    w1 = space.weights[c1.members]
    w2 = space.weights[c2.members]
    trunc = truncate(u.frames, k, sign)
    sup_term = float((trunc[np.ix_(c1.frames, c1.members)] ** 2 @ w1).max())
    _, ng = upper_gradient(space, trunc[c1.frames])
    energy = float((ng[:, c1.members] ** p @ w1).sum() * dt)
    lhs = sup_term + energy
    rhs_space = float((trunc[np.ix_(c2.frames, c2.members)] ** p @ w2).sum() * dt) / (r2 - r1) ** p
    if variant == "full":
        fr = frames_between(u, tau2, tau1)
        rhs_time = float((trunc[np.ix_(fr, c2.members)] ** 2 @ w2).sum() * dt) / (tau1 - tau2)
    else:
        k1 = u.frame_index(tau1)
        rhs_time = float(trunc[k1, c2.members] ** 2 @ w2)
    rhs = rhs_space + rhs_time
    witness = None
    if rhs == 0:
        if lhs == 0:
            C = 0.0
        else:
            C = math.inf
            witness = {"x0": int(x0), "r1": r1, "r2": r2, "tau": [tau2, tau1, tau0], "k": k, "sign": sign}
    else:
        C = lhs / rhs
    return DGCResult(float(C), lhs, rhs_space, rhs_time, sup_term, energy, witness)


def dgc_sweep(u, n_instances=60, seed=0, p=3.0, variant="full", centers=None, radii=None,
              quantiles=(0.3, 0.7)):
    """Evaluate :func:`dgc_check` on a seeded sample of cylinders, levels and signs.

    Levels are drawn between the given quantiles of ``u`` on the outer
    cylinder so that each truncation is nontrivial. Returns the list of
    instances and summary statistics (max, median, finite count).
    """
    rng = np.random.default_rng(seed)
    space = u.space
    diam = space.diameter
    ell = space.max_edge_length
    if radii is None:
        radii = [max(2 * ell, diam / 8), max(3 * ell, diam / 6)]
    if centers is None:
        ecc = np.array([space.distances_from(i).max() for i in range(space.n_nodes)])
        centers = space.node_ids[ecc <= np.quantile(ecc, 0.5)]
    T = u.n_frames
    out = []
    attempts = 0
    while len(out) < n_instances and attempts < 50 * n_instances:
        attempts += 1
        c = int(rng.choice(centers))
        r1 = float(rng.choice(radii))
        r2 = r1 + max(ell, r1 / 2)
        j0 = int(rng.integers(T // 2, T))
        span = max(2, int(rng.integers(2, max(3, T // 3))))
        j2 = max(0, j0 - span)
        if j2 >= j0 - 1:
            continue
        j1 = int(rng.integers(j2 + 1, j0))
        t = u.times
        cyl = cylinder(u, c, r2, t[j2], t[j0])
        vals = cyl.values(u).ravel()
        lo, hi = np.quantile(vals, quantiles)
        if hi <= lo:
            continue
        k = float(rng.uniform(lo, hi))
        sign = "plus" if rng.random() < 0.5 else "minus"
        res = dgc_check(u, c, r1, r2, t[j2], t[j1], t[j0], k, sign, variant, p)
        if res.lhs == 0 and res.rhs_space + res.rhs_time == 0:
            continue
        out.append({"center": c, "r1": r1, "r2": r2, "tau2": float(t[j2]), "tau1": float(t[j1]),
                    "tau0": float(t[j0]), "k": k, "sign": sign, "C": res.C})
    Cs = np.array([o["C"] for o in out])
    finite = np.isfinite(Cs)
    summary = {"n": len(out), "n_finite": int(finite.sum()),
               "max": float(Cs.max()) if len(Cs) else 0.0,
               "median": float(np.median(Cs)) if len(Cs) else 0.0,
               "min": float(Cs.min()) if len(Cs) else 0.0, "seed": int(seed)}
    return out, summary


# ---------------------------------------------------------- iteration traces

def radius_sequence(r0, n_max):
    """``r_n = r0/2 + r0/2^(n+1)``."""
    n = np.arange(n_max + 1)
    return r0 / 2 + r0 / 2.0 ** (n + 1)


def minus_levels(ess_inf, osc, n_max):
    n = np.arange(n_max + 1)
    return ess_inf + osc / 4 + osc / 2.0 ** (n + 2)


def plus_levels(ess_sup, osc, lam, n_max):
    n = np.arange(n_max + 1)
    return ess_sup - osc / 2.0 ** (lam + 1) - osc / 2.0 ** (lam + 1 + n)


def recursion_exponent(p, kappa):
    """``2 - p/kappa``."""
    return 2.0 - p / kappa


@dataclass
class IterationTrace:
    sign: str
    mode: str
    r: np.ndarray
    k: np.ndarray
    t_lo: np.ndarray
    t_hi: float
    Y: np.ndarray
    nu_A: np.ndarray
    nu_Q: np.ndarray
    p: float
    kappa: float
    lam: int
    epsilon: float
    osc: float
    C0: float | None = None
    eps_ok: bool | None = None

    @property
    def exponent(self):
        return recursion_exponent(self.p, self.kappa)

    @property
    def base(self):
        return 4.0 ** (self.p * self.exponent)

    @property
    def converged(self):
        return bool(np.any(self.Y == 0))

    @property
    def first_zero(self):
        z = np.flatnonzero(self.Y == 0)
        return int(z[0]) if len(z) else None

    def to_dict(self):
        d = {}
        for key, val in asdict(self).items():
            d[key] = val.tolist() if isinstance(val, np.ndarray) else val
        d.update(exponent=self.exponent, base=self.base, converged=self.converged)
        return d


def build_trace(u, x0, t_star, r0, scaling, sign, n_max=12, kappa=None, mode="space_time",
                t_prime=None, radii=None, levels=None, epsilon=None, check_margin=True):
    """Iteration trace ``Y_n = nu(A_n) / nu(Q_n)`` by exact counting.

    Parameters
    ----------
    u : SpaceTimeFunction
    x0 : node id
    t_star : float
        Top time of the cylinders (snapped to the frame at or below).
    r0 : float
    scaling : ScalingParams
    sign : {"plus", "minus"}
    mode : {"space_time", "time_independent"}
        ``space_time`` cylinders are ``B(r_n) x (t* - theta r_n^p, t*]``;
        ``time_independent`` ones are ``B(r_n) x (t', t*]``.
    radii, levels : arrays, optional
        Override the default sequences ``r0/2 + r0/2^(n+1)`` and the
        minus/plus levels.
    """
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    p = scaling.p
    kappa = 2 * p if kappa is None else float(kappa)
    t_star = snap_time(u, t_star)
    r = radius_sequence(r0, n_max) if radii is None else np.asarray(radii, dtype=float)
    if levels is None:
        if sign == "minus":
            levels = minus_levels(scaling.ess_inf, scaling.osc, n_max)
            default_eps = 0.5
        else:
            levels = plus_levels(scaling.ess_sup, scaling.osc, scaling.lam, n_max)
            default_eps = 2.0 ** -scaling.lam
    else:
        default_eps = None
    levels = np.asarray(levels, dtype=float)
    if len(r) != len(levels):
        raise ValueError("radii and levels must have equal length")
    eps = epsilon if epsilon is not None else default_eps
    theta = scaling.theta(sign)
    if mode == "space_time":
        t_lo = t_star - theta * r ** p
    elif mode == "time_independent":
        if t_prime is None:
            raise ValueError("time_independent mode needs t_prime")
        t_lo = np.full(len(r), float(t_prime))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if check_margin and t_lo.min() < u.t_start - _TTOL * u.time_step:
        raise MarginError(f"trace needs history back to {t_lo.min():.6g}, trajectory starts at {u.t_start:.6g}",
                          required=float(t_lo.min()), available=u.t_start)
    nu_A = np.empty(len(r))
    nu_Q = np.empty(len(r))
    eps_ok = True if eps is not None else None
    clipped = np.clip(u.frames, scaling.ess_inf, scaling.ess_sup)
    for n in range(len(r)):
        cyl = cylinder(u, x0, r[n], t_lo[n], t_star, check_margin=False)
        nu_A[n] = level_set_measure(u, cyl, levels[n], sign)
        nu_Q[n] = cyl.measure
        if eps is not None:
            tr = truncate(clipped[np.ix_(cyl.frames, cyl.members)], levels[n], sign)
            if tr.size and tr.max() > eps * scaling.osc * (1 + 1e-12):
                eps_ok = False
            if n + 1 < len(r) and abs(levels[n + 1] - levels[n]) < eps * scaling.osc / 2.0 ** (n + 2) * (1 - 1e-12):
                eps_ok = False
    Y = np.where(nu_Q > 0, nu_A / np.where(nu_Q > 0, nu_Q, 1.0), 0.0)
    return IterationTrace(sign, mode, r, levels, t_lo, t_star, Y, nu_A, nu_Q, p, kappa, scaling.lam,
                          eps if eps is not None else float("nan"), scaling.osc, None, eps_ok)


def recursion_factor(mode, p, kappa, lam=1, eps_gamma=1.0):
    """``M^(2-p/kappa)`` of the recursion for the given mode."""
    e = recursion_exponent(p, kappa)
    if mode == "space_time":
        M = 3 + eps_gamma ** (p - 2) + eps_gamma ** (2 - p)
    elif mode == "time_independent":
        M = 2 + 2.0 ** ((lam + 1) * (p - 2))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return M ** e


@dataclass
class RecursionFit:
    C0_fit: float
    residuals: np.ndarray
    binding_n: int | None
    eps_ok: bool | None
    mode: str


def lemma_recursion_verify(trace, mode=None, eps_gamma=None):
    """Smallest ``C0`` with ``Y_{n+2} <= C0 M^e 4^(p n e) Y_n^e`` along the trace.

    ``residuals[n]`` is ``Y_{n+2} / (M^e 4^(p n e) Y_n^e)`` (0 when both vanish);
    the binding ``n`` attains the maximum.
    """
    mode = trace.mode if mode is None else mode
    Y = np.asarray(trace.Y, dtype=float)
    if len(Y) < 3:
        raise ValueError("trace needs at least 3 ratios")
    p, kappa = trace.p, trace.kappa
    e = recursion_exponent(p, kappa)
    if eps_gamma is None:
        eps_gamma = 1.0
    fac = recursion_factor(mode, p, kappa, trace.lam, eps_gamma)
    res = np.zeros(len(Y) - 2)
    for n in range(len(Y) - 2):
        if Y[n] == 0:
            if Y[n + 2] > 0:
                raise DataCorruptionError(f"Y_{n} = 0 but Y_{n + 2} = {Y[n + 2]} > 0")
            continue
        res[n] = Y[n + 2] / (fac * 4.0 ** (p * n * e) * Y[n] ** e)
    C0 = float(res.max()) if len(res) else 0.0
    binding = int(np.argmax(res)) if C0 > 0 else None
    trace.C0 = C0
    return RecursionFit(C0, res, binding, trace.eps_ok, mode)


# ------------------------------------------------------ fast convergence

@dataclass
class FastConvergence:
    threshold: float
    converged: bool
    trace: np.ndarray
    n_converged: int | None
    diverged: bool
    classical_threshold: float


def lemma3_threshold(C, b, alpha):
    """``C^(-1/alpha) b^(1 - alpha^2)``."""
    return C ** (-1.0 / alpha) * b ** (1.0 - alpha ** 2)


def classical_threshold(C, b, alpha):
    """``C^(-1/alpha) b^(-1/alpha^2)``, for which equality iteration provably decays."""
    return C ** (-1.0 / alpha) * b ** (-1.0 / alpha ** 2)


def fast_convergence(C, b, alpha_exp, Y0, n_max=10_000, tol=1e-8):
    """Iterate ``Y_{n+1} = C b^n Y_n^(1+alpha)`` from ``Y0`` and report convergence.

    The iteration runs in log space and stops once ``Y_n < tol`` or the
    iterates overflow. ``trace`` holds ``Y_0..Y_N`` (``inf`` after overflow).
    """
    if not (C > 1 and b > 1):
        raise ValueError("need C > 1 and b > 1")
    if not alpha_exp > 0:
        raise ValueError("need alpha > 0")
    if Y0 < 0:
        raise ValueError("need Y0 >= 0")
    thr = lemma3_threshold(C, b, alpha_exp)
    cls = classical_threshold(C, b, alpha_exp)
    if Y0 == 0:
        return FastConvergence(thr, True, np.zeros(1), 0, False, cls)
    lc, lb = math.log(C), math.log(b)
    ly = math.log(Y0)
    ltol = math.log(tol)
    logs = [ly]
    conv, div, n_conv = False, False, None
    if ly < ltol:
        conv, n_conv = True, 0
    else:
        for n in range(n_max):
            ly = lc + n * lb + (1 + alpha_exp) * ly
            logs.append(ly)
            if ly < ltol:
                conv, n_conv = True, n + 1
                break
            if ly > 700:
                div = True
                break
    trace = np.exp(np.minimum(np.array(logs), 709.0))
    trace[np.array(logs) > 709] = np.inf
    return FastConvergence(thr, conv, trace, n_conv, div, cls)


def alpha0(C0, p, kappa):
    """Threshold of the first alternative, computed from ``C0``, ``p`` and ``kappa``.

    ``(C0 * 5^e)^(-1/a) * (4^(2 p e))^(1 - a^2)`` with ``e = 2 - p/kappa`` and
    ``a = 1 - p/kappa``; independent of lambda.
    """
    if kappa <= p:
        raise ValueError("kappa must exceed p")
    e = recursion_exponent(p, kappa)
    a = 1.0 - p / kappa
    C = C0 * recursion_factor("space_time", p, kappa)
    return lemma3_threshold(C, 4.0 ** (2 * p * e), a)


def lemma2_threshold(C0, p, kappa, lam):
    """Initial-ratio threshold for the time-independent recursion at ``lam``."""
    e = recursion_exponent(p, kappa)
    a = 1.0 - p / kappa
    C = C0 * recursion_factor("time_independent", p, kappa, lam)
    return lemma3_threshold(C, 4.0 ** (2 * p * e), a)


def _effective_alpha0(C0, p, kappa):
    a0 = alpha0(C0, p, kappa)
    if a0 >= 1:
        warnings.warn(f"alpha0 = {a0:.4g} >= 1 for C0={C0}, p={p}, kappa={kappa}; using 1", RuntimeWarning)
        return a0, 1.0
    return a0, a0


# ---------------------------------------------------------- alternatives

@dataclass
class Classification:
    branch: str
    t_star: float | None
    alpha0: float
    alpha0_raw: float
    k0_minus: float
    grid: np.ndarray
    ratios: np.ndarray
    n_grid: int

    def predicate(self, u, x0, r, scaling):
        """Re-evaluate the branch predicate on the recorded evidence."""
        if self.branch == "first":
            return first_alternative_ratio(u, x0, self.t_star, r, scaling, self.k0_minus) < self.alpha0
        return all(first_alternative_ratio(u, x0, t, r, scaling, self.k0_minus) >= self.alpha0 for t in self.grid)


def _check_outer_margin(u, t0, r, scaling):
    need = t0 - 2 * scaling.theta_plus * r ** scaling.p
    if need < u.t_start - _TTOL * u.time_step:
        raise MarginError(f"intrinsic cylinder needs history back to {need:.6g}, trajectory starts at "
                          f"{u.t_start:.6g}", required=need, available=u.t_start)
    if t0 > u.t_end + _TTOL * u.time_step:
        raise MarginError(f"t0={t0} beyond the trajectory end {u.t_end}", required=t0, available=u.t_end)


def first_alternative_ratio(u, x0, t_star, r, scaling, k0_minus):
    """``nu({u <= k0-} cap Q) / nu(Q)`` for ``Q = B(x0, r) x (t* - theta_- r^p, t*]``."""
    ts = snap_time(u, t_star)
    cyl = cylinder(u, x0, r, ts - scaling.theta_minus * r ** scaling.p, ts, check_margin=False)
    return level_set_measure(u, cyl, k0_minus, "minus", strict=False) / cyl.measure


def t_star_grid(t0, theta_plus, r, p, n_grid=16):
    """``t0 - theta_+ r^p + j theta_+ r^p / n_grid`` for ``j = 1..n_grid``."""
    L = theta_plus * r ** p
    return t0 - L + L * np.arange(1, n_grid + 1) / n_grid


def classify_alternative(u, x0, t0, r, scaling, C0_reference, kappa=None, n_grid=16):
    """Decide which alternative holds at ``(x0, t0)`` for radius ``r``.

    Returns the first branch at the earliest grid ``t*`` whose sub-level ratio
    ``nu({u <= k0-} cap Q) / nu(Q)`` is below ``alpha0``, else the second.
    """
    p = scaling.p
    kappa = 2 * p if kappa is None else kappa
    _check_outer_margin(u, t0, r, scaling)
    raw, a0 = _effective_alpha0(C0_reference, p, kappa)
    k0 = scaling.ess_inf + scaling.osc / 2
    grid = t_star_grid(t0, scaling.theta_plus, r, p, n_grid)
    ratios = np.array([first_alternative_ratio(u, x0, t, r, scaling, k0) for t in grid])
    below = np.flatnonzero(ratios < a0)
    if len(below):
        return Classification("first", float(grid[below[0]]), a0, raw, k0, grid, ratios, n_grid)
    return Classification("second", None, a0, raw, k0, grid, ratios, n_grid)


@dataclass
class ReductionResult:
    branch: str
    sigma: float
    s_used: int | None = None
    lambda_used: int | None = None
    t_prime: float | None = None
    traces: dict = field(default_factory=dict, repr=False)
    details: dict = field(default_factory=dict)


def reduce_first(u, x0, t0, r, scaling, t_star, C0=1.0, kappa=None, s_max=20, n_max=12):
    """Oscillation reduction under the first alternative.

    1. The minus trace at ``t*`` must reach ``Y_n = 0``, certifying
       ``u >= inf + osc/4`` on ``B(r/2) x (t* - theta_-(r/2)^p, t*]``.
    2. ``t'`` is the earliest frame in ``(t0 - 2 theta_+ r^p, t0 - theta_-(r/4)^p]``
       where ``u(., t') >= inf + osc/4`` on ``B(r/2)``.
    3. The smallest ``s`` is sought whose time-independent trace on
       ``B(r/8 + r/(8 2^n)) x (t', t0]`` with levels
       ``inf + osc/2^(lam+s+1) (1 + 2^-n)`` starts below the threshold and
       reaches zero.

    The certified bound is ``u >= inf + osc/2^(lam+s+1)`` on the final cylinder,
    so ``s_used = lam + s`` and ``sigma0 = 1 - 2^-(s_used+1)``.
    """
    p = scaling.p
    kappa = 2 * p if kappa is None else kappa
    lam = scaling.lam
    inf, osc = scaling.ess_inf, scaling.osc
    tr_minus = build_trace(u, x0, t_star, r, scaling, "minus", n_max, kappa)
    details = {"minus_trace_Y": tr_minus.Y.tolist()}
    if not tr_minus.converged:
        raise ReductionFailure("first alternative: minus trace did not reach zero", details)
    tp_lo = t0 - 2 * scaling.theta_plus * r ** p
    tp_hi = t0 - scaling.theta_minus * (r / 4) ** p
    half = ball(u.space, x0, r / 2).members
    cands = frames_between(u, tp_lo, tp_hi)
    if tp_lo < u.t_start:
        cands = np.concatenate([[0], cands]) if u.t_start <= tp_hi else cands
    t_prime = None
    for kf in cands:
        if np.all(u.frames[kf, half] >= inf + osc / 4 - 1e-12 * max(1.0, abs(osc))):
            t_prime = float(u.times[kf])
            break
    details["t_prime_range"] = [tp_lo, tp_hi]
    if t_prime is None:
        raise ReductionFailure("first alternative: no time slice above inf + osc/4 on B(r/2)", details)
    n = np.arange(n_max + 1)
    radii = r / 8 + r / (8 * 2.0 ** n)
    tried = []
    for s in range(1, s_max + 1):
        levels = inf + osc / 2.0 ** (lam + s + 1) * (1 + 2.0 ** -n)
        tr = build_trace(u, x0, t0, r / 8, scaling, "minus", n_max, kappa, mode="time_independent",
                         t_prime=t_prime, radii=radii, levels=levels, epsilon=2.0 ** -(lam + s))
        thr = lemma2_threshold(C0, p, kappa, lam)
        tried.append({"s": s, "Y0": float(tr.Y[0]), "threshold": thr, "converged": tr.converged})
        if tr.Y[0] <= thr and tr.converged:
            s_used = lam + s
            sigma0 = 1 - 2.0 ** -(s_used + 1)
            details["s_search"] = tried
            return ReductionResult("first", sigma0, s_used=s_used, t_prime=t_prime,
                                   traces={"minus": tr_minus, "time_independent": tr}, details=details)
    details["s_search"] = tried
    raise ReductionFailure(f"first alternative: no s <= {s_max} satisfies the threshold", details)


def slice_fraction_bound(a0):
    """``(1 - 3 a0/4) / (1 - a0/2)``."""
    return (1 - 0.75 * a0) / (1 - 0.5 * a0)


def persistent_level_search(u, x0, t0, r, scaling, a0, s_max=20, annular=None,
                            deltas=(1 / 2, 1 / 4, 1 / 8, 1 / 16, 1 / 32, 1 / 64)):
    """Smallest ``s`` with ``mu({u(., t) > sup - osc/4^s} cap B) <= bound mu(B)`` on every frame.

    With ``annular=(c, alpha)`` also records, per ``delta``, whether the
    decomposition ``c delta^alpha + inner fraction`` already meets the bound.
    """
    bound = slice_fraction_bound(a0)
    B = ball(u.space, x0, r)
    w = u.space.weights[B.members]
    fr = frames_between(u, t0 - scaling.theta_plus * r ** scaling.p, t0)
    vals = u.frames[np.ix_(fr, B.members)]
    found, fractions = None, []
    for s in range(1, s_max + 1):
        level = scaling.ess_sup - scaling.osc / 2.0 ** (2 * s)
        frac = float(((vals > level) @ w).max() / B.measure)
        fractions.append(frac)
        if frac <= bound:
            found = s
            break
    diag = {"bound": bound, "fractions": fractions}
    if annular is not None and found is not None:
        c, alpha = annular
        level = scaling.ess_sup - scaling.osc / 2.0 ** (2 * found)
        rows = []
        for d in deltas:
            inner = ball(u.space, x0, (1 - d) * r).members
            wi = u.space.weights[inner]
            vi = u.frames[np.ix_(fr, inner)]
            inner_frac = float(((vi > level) @ wi).max() / B.measure) if len(inner) else 0.0
            rows.append({"delta": d, "shell_bound": c * d ** alpha, "inner_fraction": inner_frac,
                         "meets": c * d ** alpha + inner_frac <= bound})
        diag["delta_scan"] = rows
    return found, diag


def level_summation(u, x0, t0, r, scaling, lam, q, tau_dilation=1.0):
    """Measures entering the level-summation bound for candidate ``lam``.

    For ``s = 1..lam-1``: ``nu(E_{h(s)})`` and ``nu(E^tau_{k(s)} minus E^tau_{h(s)})``
    with ``k(s) = sup - osc/2^s`` and ``h(s) = sup - osc/2^(s+1)``, on
    ``(t0 - theta_+ r^p, t0]`` with ``theta_+`` at ``lam``.
    """
    sc = scaling.with_lambda(lam)
    p = sc.p
    t_lo = t0 - sc.theta_plus * r ** p
    Q = cylinder(u, x0, r, t_lo, t0, check_margin=False)
    Qt = cylinder(u, x0, tau_dilation * r, t_lo, t0, check_margin=False)
    sup, osc = sc.ess_sup, sc.osc
    rows = []
    for s in range(1, lam):
        k = sup - osc / 2.0 ** s
        h = sup - osc / 2.0 ** (s + 1)
        e_h = level_set_measure(u, Q, h, "plus")
        band = level_set_measure(u, Qt, k, "plus") - level_set_measure(u, Qt, h, "plus")
        rows.append({"s": s, "nu_E_h": e_h, "nu_band": band})
    k0 = sup - osc / 2.0 ** lam
    Y = level_set_measure(u, Q, k0, "plus") / Q.measure
    # empirical constant of the decay C / (lam-1)^((p-q)/p)
    C_emp = Y * (lam - 1) ** ((p - q) / p) if lam > 1 else float("nan")
    lhs = (lam - 1) * level_set_measure(u, Q, k0, "plus") ** (p / (p - q))
    return {"lambda": lam, "Y": Y, "C_decay": C_emp, "rows": rows, "summed_lhs": lhs, "nu_Q": Q.measure}


def reduce_second(u, x0, t0, r, scaling_in, C0=1.0, kappa=None, q=None, lambda_max=24, s_max=20,
                  n_max=12, annular=None, tau_dilation=1.0):
    """Oscillation reduction under the second alternative.

    (i) per-slice measure bound with the smallest ``s``; (ii) the smallest
    ``lam >= scaling_in.lam`` whose top-level ratio ``nu(E_{k0+}) / nu(Q)`` is
    below the threshold and (iii) whose plus trace at ``t0`` reaches zero.
    Returns ``sigma1 = 1 - 2^-(lam+1)``.
    """
    p = scaling_in.p
    kappa = 2 * p if kappa is None else kappa
    q = (1 + p) / 2 if q is None else q
    raw, a0 = _effective_alpha0(C0, p, kappa)
    s_found, slice_diag = persistent_level_search(u, x0, t0, r, scaling_in, a0, s_max, annular)
    details = {"slice": slice_diag, "s_slice": s_found, "alpha0": a0, "alpha0_raw": raw}
    decay = []
    details["decay"] = decay
    thr = a0
    for lam in range(max(1, scaling_in.lam), lambda_max + 1):
        sc = scaling_in.with_lambda(lam)
        need = t0 - sc.theta_plus * r ** p
        if need < u.t_start - _TTOL * u.time_step:
            details["stopped"] = f"margin exhausted at lambda={lam}"
            break
        row = level_summation(u, x0, t0, r, scaling_in, lam, q, tau_dilation)
        row["threshold"] = thr
        decay.append(row)
        if row["Y"] > thr:
            continue
        tr = build_trace(u, x0, t0, r, sc, "plus", n_max, kappa)
        row["trace_converged"] = tr.converged
        if tr.converged:
            return ReductionResult("second", 1 - 2.0 ** -(lam + 1), s_used=s_found, lambda_used=lam,
                                   traces={"plus": tr}, details=details)
    raise ReductionFailure(f"second alternative: no lambda <= {lambda_max} works", details)


# ------------------------------------------------------ oscillation rounds

@dataclass
class RoundRecord:
    index: int
    r: float
    rho: float
    osc: float
    ess_inf: float
    ess_sup: float
    alternative: str | None = None
    indicated: str | None = None
    fallback: bool = False
    sigma: float | None = None
    s_used: int | None = None
    lambda_used: int | None = None
    t_star: float | None = None
    next_osc: float | None = None
    verified: bool | None = None


@dataclass
class OscReport:
    rounds: list
    sigma0: float | None
    sigma1: float | None
    sigma: float | None
    exponent: float | None
    r_squared: float | None
    status: str
    C0: float
    kappa: float
    n_grid: int
    message: str = ""

    @property
    def osc_sequence(self):
        return [rd.osc for rd in self.rounds]

    @property
    def radii(self):
        return [rd.rho for rd in self.rounds]

    def to_dict(self):
        d = asdict(self)
        d["osc_sequence"] = self.osc_sequence
        return d


def holder_fit(radii, oscs):
    """Least-squares slope and R^2 of ``log osc`` against ``log radius``."""
    x = np.log(np.asarray(radii, dtype=float))
    y = np.log(np.asarray(oscs, dtype=float))
    if len(x) < 2 or not np.all(np.isfinite(y)):
        return None, None
    slope, icpt = np.polyfit(x, y, 1)
    pred = slope * x + icpt
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(r2)


def fit_C0(u, x0, t0, r, scaling, kappa, n_max=12):
    """Empirical ``C0`` from the minus and plus traces at ``t0`` (at least 1)."""
    fits = [1.0]
    for sign in ("minus", "plus"):
        try:
            tr = build_trace(u, x0, t0, r, scaling, sign, n_max, kappa)
            fits.append(lemma_recursion_verify(tr).C0_fit)
        except (MarginError, DataCorruptionError):
            continue
    return float(max(fits))


def oscillation_reduce(u, x0, t0, r, lambda_max=24, levels=3, p=3.0, kappa=None, C0=None, lam=1,
                       n_grid=16, s_max=20, tau_dilation=1.0, q=None, n_max=12, annular=None):
    """Iterated reduction of oscillation around ``(x0, t0)``.

    Round 0 measures the oscillation on ``F_0 = B(x0, 2 tau r) x`` (all frames
    up to ``t0``). Each round classifies, reduces, and shrinks to
    ``F_{i+1} = B(x0, r_i/8) x (t0 - theta_-(r_i/8)^p, t0]`` intersected with
    ``F_i``, with ``r_{i+1} = r_i / 8``. If the indicated branch fails to
    reduce, the other branch is attempted and the round is marked as a
    fallback. Rounds stop at ``levels``, on margin exhaustion, below the
    atomic scale, or when the oscillation vanishes.
    """
    space = u.space
    kappa = 2 * p if kappa is None else kappa
    t0 = snap_time(u, t0)
    x0i = space.idx(x0)
    dist = space.distances_from(x0i)
    times = u.times
    # F as (node mask, frame mask)
    node_mask = dist < 2 * tau_dilation * r
    frame_mask = times <= t0 + _TTOL * u.time_step
    rho = 2 * tau_dilation * r
    rounds, status, message = [], "ok", ""
    sig0, sig1 = [], []
    C0_used = C0
    for i in range(levels + 1):
        vals = u.frames[np.ix_(frame_mask, node_mask)]
        lo, hi = float(vals.min()), float(vals.max())
        osc = hi - lo
        rec = RoundRecord(i, r, rho, osc, lo, hi)
        if rounds:
            rounds[-1].next_osc = osc
            prev = rounds[-1]
            if prev.sigma is not None:
                prev.verified = bool(osc <= prev.sigma * prev.osc * (1 + 1e-12) + 1e-15)
        rounds.append(rec)
        if osc <= 1e-14 * max(1.0, abs(hi)):
            status = "trivial" if i == 0 else status
            message = "oscillation vanished; trivially continuous"
            break
        if i == levels:
            break
        sc = theta_scaling(osc, lam, p, lo)
        try:
            if C0_used is None:
                C0_used = fit_C0(u, x0, t0, r, sc, kappa, n_max)
            cls = classify_alternative(u, x0, t0, r, sc, C0_used, kappa, n_grid)
        except MarginError as exc:
            status, message = "margin_exhausted", str(exc)
            break
        rec.indicated = cls.branch
        rec.t_star = cls.t_star
        order = ["first", "second"] if cls.branch == "first" else ["second", "first"]
        result, failures = None, {}
        for branch in order:
            try:
                if branch == "first":
                    t_star = cls.t_star
                    if t_star is None:
                        # fallback: use the grid point with the smallest ratio
                        t_star = float(cls.grid[int(np.argmin(cls.ratios))])
                    result = reduce_first(u, x0, t0, r, sc, t_star, C0_used, kappa, s_max, n_max)
                else:
                    result = reduce_second(u, x0, t0, r, sc, C0_used, kappa, q, lambda_max, s_max, n_max,
                                           annular, tau_dilation)
                break
            except (ReductionFailure, MarginError) as exc:
                failures[branch] = getattr(exc, "details", {}) or {"error": str(exc)}
        if result is None:
            raise ReductionFailure(f"round {i}: neither alternative reduced the oscillation",
                                   {"failures": failures, "rounds": [asdict(x) for x in rounds]}, round_index=i)
        rec.alternative = result.branch
        rec.fallback = result.branch != cls.branch
        rec.sigma = result.sigma
        rec.s_used = result.s_used
        rec.lambda_used = result.lambda_used
        (sig0 if result.branch == "first" else sig1).append(result.sigma)
        # shrink
        r_new = r / 8
        if r_new < space.max_edge_length:
            status, message = "atomic_scale", f"next radius {r_new:.4g} is below the edge length"
            break
        theta_m = sc.theta_minus
        node_mask = node_mask & (dist < r_new)
        frame_mask = frame_mask & (times > t0 - theta_m * r_new ** p + _TTOL * u.time_step)
        frame_mask[u.frame_index(t0)] = True
        if not node_mask.any():
            node_mask[x0i] = True
        r, rho = r_new, r_new
    s0 = max(sig0) if sig0 else None
    s1 = max(sig1) if sig1 else None
    present = [s for s in (s0, s1) if s is not None]
    sigma = max(present) if present else None
    good = [rd for rd in rounds if rd.osc > 0]
    if status == "trivial" or len(good) < 2:
        exponent, r2 = None, None
    else:
        exponent, r2 = holder_fit([rd.rho for rd in good], [rd.osc for rd in good])
    return OscReport(rounds, s0, s1, sigma, exponent, r2, status, float(C0_used) if C0_used else 1.0,
                     float(kappa), n_grid, message)
