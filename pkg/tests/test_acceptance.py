"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import math
import time
import warnings

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from conftest import random_connected_graph, record_criterion
from dglab.calculus import (
    SpaceTimeFunction,
    cheeger_derivative,
    euclidean_gradient,
    mollifier_weights,
    path_inequality_check,
    time_mollify,
    upper_gradient,
)
from dglab.degiorgi import (
    classify_alternative,
    dgc_sweep,
    fast_convergence,
    lemma3_threshold,
    oscillation_reduce,
    theta_scaling,
)
from dglab.evolution import (
    SolverConfig,
    generate_test_field,
    iteration_lemma_check,
    minimizing_movement_step,
    p_energy,
    quasiminimality_estimate,
    solve_trajectory,
    step_objective,
)
from dglab.space import (
    annular_decay_fit,
    complete_graph,
    doubling_constant,
    grid_graph,
    path_graph,
    poincare_estimate,
)

pytestmark = pytest.mark.acceptance


@pytest.fixture(autouse=True)
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        warnings.filterwarnings("ignore", message="alpha0 = ")
        yield


@pytest.fixture(scope="module")
def kink16():
    sp = grid_graph(16, 16)
    cfg = SolverConfig(p=3.0, tau=0.05)
    u0 = generate_test_field(sp, "kink", n_frames=2).frames[0]
    t = time.perf_counter()
    u = solve_trajectory(sp, u0, 50, cfg)
    return sp, cfg, u, time.perf_counter() - t


def test_criterion_1_fast_convergence():
    t = time.perf_counter()
    rng = np.random.default_rng(2024)
    params = np.column_stack([rng.uniform(1.1, 10, 200), rng.uniform(1.1, 8, 200), rng.uniform(0.1, 1, 200)])
    n_conv = 0
    for C, b, a in params:
        res = fast_convergence(C, b, a, lemma3_threshold(C, b, a), n_max=10_000, tol=1e-8)
        n_conv += res.converged
    closed = abs(lemma3_threshold(2.0, 4.0, 0.5) - math.sqrt(2) / 2)
    dt = time.perf_counter() - t
    ok = n_conv == 200 and closed <= 1e-12 and dt < 5
    record_criterion(1, ok, f"{n_conv}/200 converge from the threshold, closed-form error {closed:.1e}, {dt:.2f}s")
    assert ok


def test_criterion_2_path_inequality():
    t = time.perf_counter()
    rng = np.random.default_rng(0)
    graphs = [random_connected_graph(int(n), rng) for n in rng.integers(2, 10, 40)]
    graphs += [complete_graph(4), path_graph(9), complete_graph(9)]
    worst, n_paths = -np.inf, 0
    for g in graphs:
        U = rng.standard_normal((100, g.n_nodes))
        eg, _ = upper_gradient(g, U)
        res = path_inequality_check(g, U, eg)
        assert res.exhaustive
        worst, n_paths = max(worst, res.worst), n_paths + res.n_paths
    dt = time.perf_counter() - t
    ok = worst <= 1e-12 and dt < 60
    record_criterion(2, ok, f"{len(graphs)} graphs, {n_paths} paths, worst violation {worst:.2e}, {dt:.2f}s")
    assert ok


def test_criterion_3_identities():
    t = time.perf_counter()
    rng = np.random.default_rng(3)
    err_lin = err_cmp = err_moll = err_abs = 0.0
    for _ in range(100):
        sp = random_connected_graph(int(rng.integers(3, 16)), rng)
        u, v = rng.standard_normal((2, sp.n_nodes))
        s, w = rng.standard_normal(2)
        lhs = cheeger_derivative(sp, s * u + w * v)
        rhs = s * cheeger_derivative(sp, u) + w * cheeger_derivative(sp, v)
        err_lin = max(err_lin, np.max(np.abs(lhs - rhs)))
        _, ng = upper_gradient(sp, u)
        e2 = euclidean_gradient(sp, u)
        deg = np.max(sp.degree)
        err_cmp = max(err_cmp, np.max(ng - e2), np.max(e2 - math.sqrt(deg) * ng))
        traj = SpaceTimeFunction(sp, rng.standard_normal((12, sp.n_nodes)), 0.1)
        h = 0.1 * int(rng.integers(1, 5))
        uh = time_mollify(traj, h)
        offs, wts = mollifier_weights(h, 0.1)
        J = offs[-1]
        Du = cheeger_derivative(sp, traj.frames)
        Du_h = sum(c * Du[J - j: J - j + uh.n_frames] for j, c in zip(offs, wts))
        absDu_h = sum(c * np.abs(Du)[J - j: J - j + uh.n_frames] for j, c in zip(offs, wts))
        Duh = cheeger_derivative(sp, uh.frames)
        err_moll = max(err_moll, np.max(np.abs(Duh - Du_h)))
        err_abs = max(err_abs, np.max(np.abs(Duh) - absDu_h))
    dt = time.perf_counter() - t
    worst = max(err_lin, err_cmp, err_moll, err_abs)
    ok = worst <= 1e-12 and dt < 10
    record_criterion(3, ok, f"linearity {err_lin:.1e}, comparability {err_cmp:.1e}, "
                            f"mollification {err_moll:.1e}, modulus {err_abs:.1e}, {dt:.2f}s")
    assert ok


def test_criterion_4_structural_constants():
    t = time.perf_counter()
    sp = grid_graph(32, 32)
    window = (4.0, 8.0)
    dbl = doubling_constant(sp, window)
    ann = annular_decay_fit(sp, window, (1 / 2, 1 / 4, 1 / 8, 1 / 16))
    pc = poincare_estimate(sp, 2.0, 2.0, window)
    rel = max(abs(e.probe_sup / e.spectral - 1) for e in pc.estimates)
    dt = time.perf_counter() - t
    ok = 1.8 <= dbl.d_mu <= 2.2 and 0.8 <= ann.alpha <= 1.2 and rel <= 0.05 and dt < 120
    record_criterion(4, ok, f"d_mu {dbl.d_mu:.3f}, alpha {ann.alpha:.3f}, "
                            f"worst Poincare gap {rel:.2%} over {len(pc.estimates)} balls, {dt:.1f}s")
    assert ok


def _grid_min(J, lo, hi, step):
    axes = np.meshgrid(*[np.arange(l, h + step / 2, step) for l, h in zip(lo, hi)], indexing="ij")
    pts = np.stack([a.ravel() for a in axes], axis=1)
    vals = np.array([J(x) for x in pts])
    return pts[np.argmin(vals)]


def test_criterion_5_solver_oracles(kink16):
    t = time.perf_counter()
    cfg2 = SolverConfig(p=4.0, tau=1.0, grad_tol=1e-13)
    v2 = minimizing_movement_step(path_graph(2), np.array([0.0, 1.0]), cfg2)
    f = lambda x: 0.5 * (x ** 2 + x ** 2) + 0.25 * abs(1 - 2 * x) ** 4
    ref2 = minimize_scalar(f, bracket=(0.0, 0.5), method="golden", tol=1e-12).x
    err2 = max(abs(v2[0] - ref2), abs(v2[1] - (1 - ref2)))
    sp3, cfg3 = path_graph(3), SolverConfig(p=3.0, tau=0.5)
    u3 = np.random.default_rng(0).uniform(0, 1, 3)
    v3 = minimizing_movement_step(sp3, u3, cfg3)
    J3 = lambda x: step_objective(sp3, x, u3, cfg3)
    coarse = _grid_min(J3, np.full(3, u3.min()), np.full(3, u3.max()), 0.02)
    fine = _grid_min(J3, np.maximum(coarse - 0.02, u3.min()), np.minimum(coarse + 0.02, u3.max()), 1e-3)
    err3 = np.max(np.abs(v3 - fine))
    sp, cfg, u, t_solve = kink16
    F = u.frames
    J_drop = [step_objective(sp, F[k], F[k - 1], cfg) - step_objective(sp, F[k - 1], F[k - 1], cfg)
              for k in range(1, len(F))]
    E = p_energy(sp, F, cfg.p)
    diss = np.max(np.diff(E))
    mp = max(F[0].min() - F.min(), F.max() - F[0].max())
    dt = time.perf_counter() - t + t_solve
    ok = (err2 <= 2e-3 and err3 <= 2e-3 and max(J_drop) < 0 and diss <= 1e-8 and mp <= 1e-8 and dt < 60)
    record_criterion(5, ok, f"2-node error {err2:.1e}, 3-node error {err3:.1e}, max J change {max(J_drop):.2e}, "
                            f"max energy increase {diss:.1e}, max principle excess {mp:.1e}, {dt:.1f}s")
    assert ok


def test_criterion_6_quasiminimality():
    t = time.perf_counter()
    sp = grid_graph(8, 8)
    cfg = SolverConfig(p=3.0, tau=0.05)
    u = solve_trajectory(sp, generate_test_field(sp, "kink", n_frames=2).frames[0], 50, cfg)
    K = quasiminimality_estimate(u, cfg, 500, seed=1).K_empirical
    noise = generate_test_field(sp, "random", n_frames=51, time_step=0.05, seed=3)
    K_noise = quasiminimality_estimate(noise, cfg, 500, seed=1).K_empirical
    dt = time.perf_counter() - t
    ok = K <= 1.1 and K_noise > 2 and dt < 120
    record_criterion(6, ok, f"K solved {K:.4f}, K noise {K_noise:.3g}, {dt:.1f}s")
    assert ok


def test_criterion_7_dgc_membership(kink16):
    sp, cfg, u, t_solve = kink16
    t = time.perf_counter()
    inst, summ = dgc_sweep(u, 60, seed=0, p=cfg.p)
    Cs = np.array([i["C"] for i in inst])
    dt = time.perf_counter() - t + t_solve
    ok = len(inst) >= 50 and np.all(np.isfinite(Cs)) and summ["max"] <= 10 * summ["median"] and dt < 120
    record_criterion(7, ok, f"{len(inst)} instances, max C {summ['max']:.4g}, median C {summ['median']:.4g}, "
                            f"ratio {summ['max'] / summ['median']:.2f}, {dt:.1f}s")
    assert ok


def test_criterion_8_regularity_surrogate():
    t = time.perf_counter()
    N = 2049
    sp = path_graph(N, length=1 / 256)
    u = generate_test_field(sp, "holder_profile", beta=0.5, x0=N // 2, n_frames=3, time_step=1e4)
    rep_a = oscillation_reduce(u, N // 2, u.t_end, 1.0, levels=3, p=3.0)
    sp = path_graph(N, length=8 / (N - 1))
    cfg = SolverConfig(p=3.0, tau=0.05)
    traj = solve_trajectory(sp, generate_test_field(sp, "kink", n_frames=2).frames[0], 200, cfg)
    rep_b = oscillation_reduce(traj, N // 2, traj.t_end, 1.0, levels=4, p=3.0)
    oscs = rep_b.osc_sequence
    dt = time.perf_counter() - t
    ok_a = rep_a.exponent is not None and 0.35 <= rep_a.exponent <= 0.65 and rep_a.r_squared >= 0.9
    ok_b = (len(oscs) >= 3 and all(a > b for a, b in zip(oscs, oscs[1:]))
            and rep_b.exponent is not None and rep_b.exponent > 0)
    ok = ok_a and ok_b and dt < 300
    record_criterion(8, ok, f"(a) exponent {rep_a.exponent:.3f} R^2 {rep_a.r_squared:.3f}; "
                            f"(b) {len(oscs)} osc values {['%.3g' % o for o in oscs]}, "
                            f"exponent {rep_b.exponent}, status {rep_b.status}, {dt:.1f}s")
    assert ok


def test_criterion_9_dichotomy():
    t = time.perf_counter()
    rng = np.random.default_rng(0)
    sp = grid_graph(6, 6)
    counts, verified = {"first": 0, "second": 0}, 0
    for _ in range(50):
        T = int(rng.integers(6, 20))
        kind = rng.choice(["smooth", "noise", "step"])
        if kind == "noise":
            fr = rng.random((T, sp.n_nodes))
        elif kind == "smooth":
            base = rng.random(sp.n_nodes)
            fr = np.array([base * (1 + 0.1 * j) for j in range(T)])
        else:
            fr = (rng.random(sp.n_nodes) < rng.uniform(0.05, 0.95)).astype(float)[None].repeat(T, 0)
            fr = fr + 0.01 * rng.random(fr.shape)
        lo = fr.min()
        sc = theta_scaling(float(fr.max() - lo), int(rng.integers(1, 4)), 3.0, float(lo))
        r = float(rng.uniform(1.0, 3.0))
        # time step chosen so the intrinsic cylinder fits in the history
        u = SpaceTimeFunction(sp, fr, 2 * sc.theta_plus * r ** 3 / (T - 1) * 1.01)
        C0 = float(rng.choice([10.0, 30.0, 100.0, 1000.0]))
        x0 = int(rng.integers(sp.n_nodes))
        cls = classify_alternative(u, x0, u.t_end, r, sc, C0)
        assert cls.branch in counts
        counts[cls.branch] += 1
        verified += bool(cls.predicate(u, x0, r, sc))
    dt = time.perf_counter() - t
    ok = verified == 50 and sum(counts.values()) == 50 and dt < 60
    record_criterion(9, ok, f"{counts['first']} first, {counts['second']} second, "
                            f"{verified}/50 predicates re-verified, {dt:.2f}s")
    assert ok


def test_criterion_10_iteration_lemma():
    t = time.perf_counter()
    ok_cases, total, worst = 0, 0, {}
    for a, b, s3 in [(1.0, 1.0, 0.5), (2.0, 0.5, 0.3)]:
        for n in (6, 11):
            rho, tau = np.linspace(0.5, 1, n), np.linspace(0, 1, n)
            R, T = np.meshgrid(rho, tau, indexing="ij")
            corpus = {
                "zero": np.zeros((n, n)),
                "const": np.full((n, n), 0.5),
                "power": 0.2 * R ** 2 * (1.5 - T),
                "power2": 0.1 * R ** 3 * (1.2 - T) ** 2,
                "violate": np.where((R == rho[0]) & (T == tau[-1]), 1e6, 0.0),
            }
            for f in corpus.values():
                res = iteration_lemma_check(f, rho, tau, s3, 1.0, 1.0, a, b)
                total += 1
                if res.holds_hypothesis:
                    ok_cases += res.holds_conclusion and res.C_fit <= res.C_theory
                    key = (a, b, s3)
                    worst[key] = max(worst.get(key, 0.0), res.C_fit / res.C_theory)
                else:
                    ok_cases += 1
    dt = time.perf_counter() - t
    ok = total == 20 and ok_cases == 20 and dt < 10
    ratios = ", ".join(f"{k}: {v:.3f}" for k, v in worst.items())
    record_criterion(10, ok, f"{ok_cases}/{total} cases consistent, max C_fit/C_theory {ratios}, {dt:.2f}s")
    assert ok
