"""
Implicit variational time stepping for the graph p-parabolic flow.

Each step minimizes

    J(v) = 1/(2 tau) sum_i mu_i (v_i - u_i)^2 + 1/p sum_e nu_e |Dv(e)|^p

with the edge measure ``nu_e = (mu_a + mu_b) / 2 * l_e``. The module also
measures empirical quasiminimality constants of space-time functions, checks
the two-variable iteration lemma on sampled functions, and builds synthetic
test fields.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .calculus import SpaceTimeFunction, cheeger_derivative
from .errors import ConfigError, ConvergenceError, DegenerateError, TrajectoryError


# ------------------------------------------------------------------ config

@dataclass
class SolverConfig:
    """Parameters of the minimizing-movement solver.

    ``fixed`` maps node ids to pinned values (Dirichlet data); an empty map
    means a free boundary.
    """

    p: float = 3.0
    tau: float = 0.1
    grad_tol: float = 1e-10
    max_newton_iters: int = 100
    shrink: float = 0.5
    fixed: dict = field(default_factory=dict)
    eps: float = 1e-10

    def __post_init__(self):
        problems = []
        if not (isinstance(self.p, (int, float)) and self.p > 2):
            problems.append(f"p must be > 2, got {self.p!r}")
        if not (isinstance(self.tau, (int, float)) and self.tau > 0):
            problems.append(f"tau must be positive, got {self.tau!r}")
        if not (isinstance(self.grad_tol, (int, float)) and self.grad_tol > 0):
            problems.append(f"grad_tol must be positive, got {self.grad_tol!r}")
        if not (isinstance(self.max_newton_iters, int) and self.max_newton_iters >= 1):
            problems.append(f"max_newton_iters must be a positive integer, got {self.max_newton_iters!r}")
        if not (0 < self.shrink < 1):
            problems.append(f"shrink must lie in (0, 1), got {self.shrink!r}")
        if problems:
            raise ConfigError(problems)
        self.fixed = {int(k): float(v) for k, v in dict(self.fixed).items()}

    @classmethod
    def from_dict(cls, d):
        """Build from the JSON section ``{"p", "tau", "tol", "max_iters", ...}``."""
        known = {"p", "tau", "tol", "max_iters", "shrink", "fixed", "eps"}
        extra = set(d) - known
        if extra:
            raise ConfigError([f"unknown solver field {k!r}" for k in sorted(extra)])
        kw = {}
        for src, dst in (("p", "p"), ("tau", "tau"), ("tol", "grad_tol"), ("max_iters", "max_newton_iters"),
                         ("shrink", "shrink"), ("eps", "eps")):
            if src in d:
                kw[dst] = d[src]
        if "fixed" in d:
            kw["fixed"] = {int(k): v for k, v in d["fixed"].items()}
        return cls(**kw)

    def to_dict(self):
        return {"p": self.p, "tau": self.tau, "tol": self.grad_tol, "max_iters": self.max_newton_iters,
                "shrink": self.shrink, "fixed": {str(k): v for k, v in self.fixed.items()}, "eps": self.eps}


# --------------------------------------------------------------- objective

def p_energy(space, v, p):
    """Sum over edges of ``nu_e |Dv(e)|^p``; accepts ``(n,)`` or ``(T, n)`` input."""
    du = np.abs(cheeger_derivative(space, v))
    return (du ** p) @ space.edge_measure


def step_objective(space, v, u_prev, config):
    """Value of the implicit-step functional ``J(v)`` for the previous level ``u_prev``."""
    mass = 0.5 / config.tau * np.dot(space.weights, (v - u_prev) ** 2)
    return float(mass + p_energy(space, v, config.p) / config.p)


def _gradient(space, v, u_prev, config, dv=None):
    D = space.difference_operator
    if dv is None:
        dv = D @ v
    flux = space.edge_measure * np.abs(dv) ** (config.p - 2) * dv
    return space.weights * (v - u_prev) / config.tau + D.T @ flux


def _hessian(space, dv, config):
    D = space.difference_operator
    w = space.edge_measure * (config.p - 1) * (dv ** 2 + config.eps ** 2) ** ((config.p - 2) / 2)
    return sparse.diags(space.weights / config.tau) + D.T @ sparse.diags(w) @ D


@dataclass
class StepInfo:
    iterations: int
    grad_norm: float
    objective: float
    objective_prev: float


def minimizing_movement_step(space, u_prev, config, return_info=False):
    """One implicit step: the minimizer of :func:`step_objective` by damped Newton.

    The Hessian uses ``(|Dv|^2 + eps^2)^((p-2)/2)`` in place of ``|Dv|^(p-2)``
    so that flat edges do not stall the linear solve; convergence is tested
    on the exact gradient restricted to non-pinned nodes.
    """
    u_prev = np.asarray(u_prev, dtype=float)
    if u_prev.shape != (space.n_nodes,) or not np.all(np.isfinite(u_prev)):
        raise TrajectoryError("u_prev must be a finite node function")
    free = np.ones(space.n_nodes, dtype=bool)
    v = u_prev.copy()
    for node, val in config.fixed.items():
        k = space.idx(node)
        free[k] = False
        v[k] = val
    J0 = step_objective(space, u_prev, u_prev, config)
    J = step_objective(space, v, u_prev, config)
    g = _gradient(space, v, u_prev, config)
    gnorm = float(np.linalg.norm(g[free]))
    it = 0
    while gnorm > config.grad_tol:
        if it >= config.max_newton_iters:
            raise ConvergenceError(
                f"Newton did not converge in {config.max_newton_iters} iterations "
                f"(gradient norm {gnorm:.3e})", grad_norm=gnorm)
        it += 1
        H = _hessian(space, space.difference_operator @ v, config).tocsc()
        d = np.zeros_like(v)
        try:
            d[free] = -spsolve(H[free][:, free], g[free])
        except RuntimeError:
            d[free] = np.nan
        slope = float(np.dot(g[free], d[free]))
        if not np.all(np.isfinite(d)) or slope >= 0:
            # gradient step scaled by the Hessian diagonal
            d[free] = -g[free] / H.diagonal()[free]
            slope = float(np.dot(g[free], d[free]))
        t = 1.0
        while True:
            cand = v + t * d
            Jc = step_objective(space, cand, u_prev, config)
            gc = _gradient(space, cand, u_prev, config)
            gcn = float(np.linalg.norm(gc[free]))
            if Jc <= J + 1e-4 * t * slope or (Jc <= J + 1e-13 * max(1.0, abs(J)) and gcn < gnorm):
                break
            t *= config.shrink
            if t < 1e-16:
                raise ConvergenceError(f"line search failed (gradient norm {gnorm:.3e})", grad_norm=gnorm)
        v, J, g, gnorm = cand, Jc, gc, gcn
    info = StepInfo(it, gnorm, J, J0)
    return (v, info) if return_info else v


def solve_trajectory(space, u0, steps, config, t_start=0.0):
    """Iterate :func:`minimizing_movement_step` ``steps`` times from ``u0``."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    frames = np.empty((steps + 1, space.n_nodes))
    frames[0] = np.asarray(u0, dtype=float)
    for k in range(steps):
        try:
            frames[k + 1] = minimizing_movement_step(space, frames[k], config)
        except ConvergenceError as exc:
            raise ConvergenceError(f"step {k + 1}: {exc}", grad_norm=exc.grad_norm, step=k + 1) from exc
    return SpaceTimeFunction(space, frames, config.tau, t_start)


# ---------------------------------------------------------- quasiminimality

@dataclass
class QuasiminReport:
    K_empirical: float
    samples: int
    C1: float
    C2: float
    worst: dict
    seed: int
    n_informative: int
    time_difference: str
    history: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return asdict(self)


def _spatial_tent(space, center, width):
    return np.clip(1.0 - space.distances_from(center) / width, 0.0, None)


def _temporal_tent(T, center, half):
    k = np.arange(T)
    return np.clip(1.0 - np.abs(k - center) / half, 0.0, None)


def _quasimin_terms(u, phi, p, time_difference):
    """Return ``(lhs, rhs)`` of the discrete quasiminimality inequality with ``C1 = C2 = 1/p``."""
    space = u.space
    dt = u.time_step
    w = space.weights
    frames = u.frames
    if time_difference == "forward":
        nxt = np.vstack([phi[1:], np.zeros((1, phi.shape[1]))])
        dphi = (nxt - phi) / dt
    elif time_difference == "centered":
        prv = np.vstack([np.zeros((1, phi.shape[1])), phi[:-1]])
        nxt = np.vstack([phi[1:], np.zeros((1, phi.shape[1]))])
        dphi = (nxt - prv) / (2 * dt)
    else:
        raise ValueError(f"unknown time difference {time_difference!r}")
    transport = -dt * float(np.sum((frames * dphi) @ w))
    active = phi != 0
    levels = np.flatnonzero(active.any(axis=1))
    edges_on = active[:, space.edge_a] | active[:, space.edge_b]
    nu = space.edge_measure
    Du = np.abs(cheeger_derivative(space, frames[levels]))
    Dv = np.abs(cheeger_derivative(space, frames[levels] - phi[levels]))
    mask = edges_on[levels]
    e_u = dt * float(np.sum(np.where(mask, Du ** p, 0.0) @ nu)) / p
    e_v = dt * float(np.sum(np.where(mask, Dv ** p, 0.0) @ nu)) / p
    return transport + e_u, e_v


def quasiminimality_estimate(u, config, phi_samples=500, seed=0, time_difference="forward",
                             amplitude=0.5):
    """Empirical quasiminimality constant of ``u`` over random test perturbations.

    Test functions are products of a graph-distance tent in space and a tent
    in time, vanishing at the initial level and on pinned nodes, scaled to
    ``amplitude`` times the oscillation of ``u`` under their support; a few
    structured bumps sit at the extrema of ``u``. For each sample

        LHS = -sum u d_t(phi) dnu + C1 sum_{phi != 0} |Du|^p dnu
        RHS = C2 sum_{phi != 0} |D(u - phi)|^p dnu

    with ``C1 = C2 = 1/p`` (the integrand of the step functional), edge sums
    over edges touching the support, and ``d_t`` a forward difference, the
    exact summation-by-parts partner of the implicit step. ``K_empirical``
    is the largest ``max(LHS, 0) / RHS`` over samples with ``RHS > 0``.
    """
    if u.n_frames < 3:
        raise TrajectoryError("quasiminimality needs at least 3 frames")
    space = u.space
    p = config.p
    T, n = u.frames.shape
    rng = np.random.default_rng(seed)
    pinned = np.zeros(n, dtype=bool)
    for node in config.fixed:
        pinned[space.idx(node)] = True
    diam = space.diameter
    structured = []
    for k in (1, T // 2, T - 1):
        structured.append((int(np.argmax(u.frames[k])), k))
        structured.append((int(np.argmin(u.frames[k])), k))

    K, worst, informative, history = 0.0, {}, 0, []
    for i in range(phi_samples):
        if i < len(structured):
            c, k0 = structured[i]
            width = max(space.max_edge_length * 2, diam / 4)
            half = max(1.0, T / 4)
        else:
            c = int(rng.integers(n))
            k0 = int(rng.integers(1, T))
            width = float(rng.uniform(space.max_edge_length * 1.01, max(diam / 2, 2 * space.max_edge_length)))
            half = float(rng.uniform(1.0, max(1.5, T / 2)))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        spatial = _spatial_tent(space, c, width)
        spatial[pinned] = 0.0
        temporal = _temporal_tent(T, k0, half)
        temporal[0] = 0.0
        shape = np.outer(temporal, spatial)
        supp = shape != 0
        if not supp.any():
            history.append(K)
            continue
        osc = float(np.ptp(u.frames[supp])) if supp.sum() > 1 else 0.0
        amp = amplitude * (osc if osc > 0 else 1.0)
        phi = sign * amp * shape
        lhs, rhs = _quasimin_terms(u, phi, p, time_difference)
        if rhs > 0:
            informative += 1
            ratio = max(lhs, 0.0) / rhs
            if ratio > K:
                K = ratio
                worst = {"index": i, "center": int(space.node_ids[c]), "level": int(k0), "width": width,
                         "half_width": half, "amplitude": sign * amp, "lhs": lhs, "rhs": rhs}
        history.append(K)
    if informative == 0:
        raise DegenerateError("every sampled test function gave a zero right-hand side; raise the amplitude")
    return QuasiminReport(float(K), int(phi_samples), 1.0 / p, 1.0 / p, worst, int(seed), informative,
                          time_difference, history)


# --------------------------------------------------------- iteration lemma

@dataclass
class IterationLemmaResult:
    holds_hypothesis: bool
    holds_conclusion: bool
    C_fit: float
    witness: dict | None
    C_theory: float


def iteration_lemma_constant(alpha, beta, sigma3, n_grid=4000):
    """Constant of the two-variable iteration lemma from the geometric-sequence argument.

    With shrink ratio ``lam``, ``C = max((1-lam)^-a / (1 - sigma3 lam^-a))`` over
    ``a`` in ``{alpha, beta}``, minimized over admissible ``lam``.
    """
    if not 0 <= sigma3 < 1:
        raise ValueError("sigma3 must lie in [0, 1)")
    exps = [e for e in (alpha, beta) if e > 0]
    if not exps:
        return 1.0 / (1.0 - sigma3)
    if sigma3 == 0:
        lo = 0.0
    else:
        lo = sigma3 ** (1.0 / max(exps))
    lam = np.linspace(lo, 1.0, n_grid + 2)[1:-1]
    vals = np.zeros_like(lam)
    for e in exps:
        vals = np.maximum(vals, (1 - lam) ** (-e) / (1 - sigma3 * lam ** (-e)))
    if not (alpha > 0 and beta > 0):
        vals = np.maximum(vals, 1.0 / (1.0 - sigma3))
    return float(vals.min())


def iteration_lemma_check(f, rho, tau, sigma3, A, B, alpha_exp, beta_exp, rtol=1e-12):
    """Check hypothesis and conclusion of the two-variable iteration lemma on a grid.

    Parameters
    ----------
    f : ndarray, shape (len(rho), len(tau))
        Nonnegative samples ``f(rho_i, tau_j)``.
    rho, tau : 1-d increasing arrays

    Returns
    -------
    IterationLemmaResult
        ``C_fit`` is the smallest ``C`` with
        ``f(r1, t1) <= C (A (r2-r1)^-alpha + B (t1-t2)^-beta)`` over all grid
        pairs with ``r1 < r2`` and ``t2 < t1``; the witness is the first pair
        violating the hypothesis.
    """
    f = np.asarray(f, dtype=float)
    rho = np.asarray(rho, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if len(rho) < 2 or len(tau) < 2:
        raise ValueError("need at least 2 grid points per axis")
    if f.shape != (len(rho), len(tau)):
        raise ValueError("f must have shape (len(rho), len(tau))")
    if np.any(f < 0):
        raise ValueError("f must be nonnegative")
    if not 0 <= sigma3 < 1:
        raise ValueError("sigma3 must lie in [0, 1)")
    if np.any(np.diff(rho) <= 0) or np.any(np.diff(tau) <= 0):
        raise ValueError("rho and tau must be strictly increasing")

    nr, nt = len(rho), len(tau)
    i1, i2 = np.triu_indices(nr, 1)
    j2, j1 = np.triu_indices(nt, 1)
    with np.errstate(divide="ignore"):
        ra = A * (rho[i2] - rho[i1]) ** (-alpha_exp)
        tb = B * (tau[j1] - tau[j2]) ** (-beta_exp)
    hyp_ok, C_fit, witness = True, 0.0, None
    for a, b, ta in zip(i1, i2, ra):
        lhs = f[a, j1]
        rhs = sigma3 * f[b, j2] + ta + tb
        bad = lhs > rhs * (1 + rtol) + rtol
        if hyp_ok and np.any(bad):
            k = int(np.argmax(bad))
            hyp_ok = False
            witness = {"r1": float(rho[a]), "r2": float(rho[b]), "tau1": float(tau[j1[k]]),
                       "tau2": float(tau[j2[k]]), "lhs": float(lhs[k]), "rhs": float(rhs[k])}
        den = ta + tb
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(lhs > 0, lhs / den, 0.0)
        C_fit = max(C_fit, float(q.max()))
    return IterationLemmaResult(hyp_ok, bool(math.isfinite(C_fit)), C_fit, witness,
                                iteration_lemma_constant(alpha_exp, beta_exp, sigma3))


# --------------------------------------------------------------- test fields

def _two_coloring(space):
    hops = np.full(space.n_nodes, -1)
    hops[0] = 0
    indptr, indices, _ = space.neighbor_csr
    frontier = [0]
    while frontier:
        nxt = []
        for v in frontier:
            for w in indices[indptr[v]:indptr[v + 1]]:
                if hops[w] < 0:
                    hops[w] = hops[v] + 1
                    nxt.append(int(w))
        frontier = nxt
    return (hops % 2).astype(float)


def generate_test_field(space, kind, n_frames=3, time_step=1.0, beta=1.0, x0=None, seed=0, t_start=0.0):
    """Deterministic synthetic space-time fields.

    Kinds
    -----
    ``holder_profile``
        ``u(x, t) = d(x, x0)^beta``, constant in time.
    ``checkerboard``
        Parity of the hop distance from the first node.
    ``random``
        Uniform noise on ``[0, 1)`` from ``seed``, independent per frame.
    ``kink``
        ``|d(x, a) - d(x, b)|`` for a diametral pair ``(a, b)``, scaled to
        ``[0, 1]``; piecewise linear with a crease between ``a`` and ``b``.
    """
    n = space.n_nodes
    if kind == "holder_profile":
        if not 0 < beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        c = space.idx(space.node_ids[0] if x0 is None else x0)
        base = space.distances_from(c) ** beta
        frames = np.tile(base, (n_frames, 1))
    elif kind == "checkerboard":
        frames = np.tile(_two_coloring(space), (n_frames, 1))
    elif kind == "random":
        frames = np.random.default_rng(seed).random((n_frames, n))
    elif kind == "kink":
        a = space.idx(space.node_ids[0] if x0 is None else x0)
        b = int(np.argmax(space.distances_from(a)))
        base = np.abs(space.distances_from(a) - space.distances_from(b))
        if base.max() > 0:
            base = base / base.max()
        frames = np.tile(base, (n_frames, 1))
    else:
        raise ValueError(f"unknown field kind {kind!r}")
    return SpaceTimeFunction(space, frames, time_step, t_start)
