"""
Weighted graphs as finite metric measure spaces.

A :class:`WeightedGraphSpace` carries node masses, positive edge lengths and
the shortest-path metric. The estimators in this module measure, over an
explicit radius window, every structural hypothesis used by the regularity
argument: doubling, annular decay, Poincaré and Sobolev constants.

Node functions are plain float arrays in the node order of the space (nodes
sorted by id); edge fields are arrays in edge order (edges sorted by
``(min id, max id)`` and oriented from the smaller to the larger id).
"""
import json
import math
import warnings
from dataclasses import dataclass, field, asdict
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import csgraph

from .errors import (
    AtomicScaleError,
    DegenerateError,
    DisconnectedGraphError,
    GraphParseError,
    NonPositiveValueError,
    UnknownNodeError,
    WindowError,
)


class WeightedGraphSpace:
    """Finite metric measure space on a connected weighted graph.

    Parameters
    ----------
    node_ids : sequence of int
        Unique node identifiers.
    weights : sequence of float
        Node masses, all positive.
    edges : sequence of (a, b, length)
        Undirected edges with positive lengths.

    The space is immutable after construction; the metric and the difference
    operator are computed lazily and cached.
    """

    def __init__(self, node_ids, weights, edges):
        ids = np.asarray(node_ids, dtype=np.int64)
        w = np.asarray(weights, dtype=float)
        if ids.ndim != 1 or ids.shape != w.shape:
            raise GraphParseError("node ids and weights must be 1-d sequences of equal length")
        if len(ids) == 0:
            raise GraphParseError("graph has no nodes")
        if len(np.unique(ids)) != len(ids):
            raise GraphParseError("node ids are not unique")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            bad = ids[~(w > 0)] if np.any(~(w > 0)) else ids[~np.isfinite(w)]
            raise NonPositiveValueError(f"nonpositive or non-finite node weight at node(s) {bad.tolist()}")
        order = np.argsort(ids, kind="stable")
        self.node_ids = ids[order]
        self.weights = w[order]
        self.index = {int(i): k for k, i in enumerate(self.node_ids)}

        seen = set()
        rows = []
        for item in edges:
            try:
                a, b, length = int(item[0]), int(item[1]), float(item[2])
            except (TypeError, ValueError, IndexError) as exc:
                raise GraphParseError(f"malformed edge {item!r}") from exc
            if a not in self.index or b not in self.index:
                raise GraphParseError(f"edge ({a}, {b}) references an unknown node")
            if a == b:
                raise GraphParseError(f"self-loop at node {a}")
            if not math.isfinite(length) or length <= 0:
                raise NonPositiveValueError(f"nonpositive edge length {length} on edge ({a}, {b})")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise GraphParseError(f"duplicate edge {key}")
            seen.add(key)
            rows.append((key[0], key[1], length))
        rows.sort()
        self.edge_a = np.array([self.index[r[0]] for r in rows], dtype=np.int64)
        self.edge_b = np.array([self.index[r[1]] for r in rows], dtype=np.int64)
        self.lengths = np.array([r[2] for r in rows], dtype=float)

        n_comp, _ = csgraph.connected_components(self.adjacency, directed=False)
        if n_comp != 1:
            raise DisconnectedGraphError(f"graph has {n_comp} connected components")
        self._rows = {}

    # ------------------------------------------------------------------ basics
    @property
    def n_nodes(self):
        return len(self.node_ids)

    @property
    def n_edges(self):
        return len(self.lengths)

    @property
    def total_mass(self):
        return float(self.weights.sum())

    @property
    def edges(self):
        """Edges as ``(a_id, b_id, length)`` tuples in the fixed global orientation."""
        return [(int(self.node_ids[a]), int(self.node_ids[b]), float(l))
                for a, b, l in zip(self.edge_a, self.edge_b, self.lengths)]

    @property
    def max_edge_length(self):
        return float(self.lengths.max()) if self.n_edges else 0.0

    @cached_property
    def adjacency(self):
        n = self.n_nodes
        A = sparse.coo_matrix((self.lengths, (self.edge_a, self.edge_b)), shape=(n, n))
        return (A + A.T).tocsr()

    @cached_property
    def difference_operator(self):
        """Sparse ``m x n`` matrix mapping a node function to ``(u(b)-u(a))/l_ab``."""
        m, n = self.n_edges, self.n_nodes
        inv = 1.0 / self.lengths
        rows = np.concatenate([np.arange(m), np.arange(m)])
        cols = np.concatenate([self.edge_a, self.edge_b])
        vals = np.concatenate([-inv, inv])
        return sparse.csr_matrix((vals, (rows, cols)), shape=(m, n))

    @cached_property
    def edge_measure(self):
        """Edge quadrature weight: mean endpoint mass times edge length."""
        return 0.5 * (self.weights[self.edge_a] + self.weights[self.edge_b]) * self.lengths

    @cached_property
    def degree(self):
        return np.bincount(np.concatenate([self.edge_a, self.edge_b]), minlength=self.n_nodes)

    @cached_property
    def neighbor_csr(self):
        """CSR arrays ``(indptr, indices, edge_ids)`` of the adjacency structure."""
        ends = np.concatenate([self.edge_a, self.edge_b])
        other = np.concatenate([self.edge_b, self.edge_a])
        eid = np.concatenate([np.arange(self.n_edges), np.arange(self.n_edges)])
        order = np.lexsort((other, ends))
        indptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
        np.add.at(indptr, ends + 1, 1)
        indptr = np.cumsum(indptr)
        return indptr, other[order].astype(np.int64), eid[order].astype(np.int64)

    # ------------------------------------------------------------------ metric
    @cached_property
    def metric(self):
        """All-pairs shortest-path distances, ``n x n``, exactly symmetric."""
        D = csgraph.shortest_path(self.adjacency, method="D", directed=False)
        # the two directions sum the same path in different orders
        return np.minimum(D, D.T)

    def distances_from(self, idx):
        """Distances from node index ``idx`` to every node."""
        if "metric" in self.__dict__:
            return self.metric[idx]
        row = self._rows.get(idx)
        if row is None:
            row = csgraph.dijkstra(self.adjacency, directed=False, indices=idx)
            if len(self._rows) > 512:
                self._rows.clear()
            self._rows[idx] = row
        return row

    @cached_property
    def diameter(self):
        if self.n_nodes <= 2048:
            return float(self.metric.max())
        # upper bound within a factor 2 is enough for window guards
        return float(2 * self.distances_from(0).max())

    def idx(self, node_id):
        """Internal index of ``node_id``."""
        try:
            return self.index[int(node_id)]
        except (KeyError, TypeError, ValueError):
            raise UnknownNodeError(f"unknown node id {node_id!r}") from None

    def to_dict(self):
        return {
            "nodes": [{"id": int(i), "weight": float(w)} for i, w in zip(self.node_ids, self.weights)],
            "edges": [{"a": a, "b": b, "length": l} for a, b, l in self.edges],
        }

    def __repr__(self):
        return f"WeightedGraphSpace(n_nodes={self.n_nodes}, n_edges={self.n_edges})"


# ---------------------------------------------------------------------- loading

def load_space(source):
    """Build a space from a graph document.

    ``source`` is a path to a JSON file, a JSON string, or an already parsed
    mapping ``{"nodes": [{"id", "weight"}], "edges": [{"a", "b", "length"}]}``.
    """
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise GraphParseError(f"cannot read graph document {source}: {exc}") from exc
        source = text
    if isinstance(source, (str, bytes)):
        try:
            doc = json.loads(source)
        except json.JSONDecodeError as exc:
            raise GraphParseError(f"graph document is not valid JSON: {exc}") from exc
    else:
        doc = source
    if not isinstance(doc, dict) or "nodes" not in doc or "edges" not in doc:
        raise GraphParseError('graph document needs "nodes" and "edges" arrays')
    try:
        ids = [int(nd["id"]) for nd in doc["nodes"]]
        weights = [float(nd.get("weight", 1.0)) for nd in doc["nodes"]]
        edges = [(e["a"], e["b"], e.get("length", 1.0)) for e in doc["edges"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphParseError(f"malformed node or edge entry: {exc}") from exc
    return WeightedGraphSpace(ids, weights, edges)


def path_graph(n, length=1.0, weight=1.0):
    """Path ``0 - 1 - ... - n-1`` with uniform edge length and node weight."""
    return WeightedGraphSpace(range(n), [weight] * n, [(i, i + 1, length) for i in range(n - 1)])


def cycle_graph(lengths, weight=1.0):
    """Cycle whose i-th edge joins ``i`` and ``i+1 mod n`` with ``lengths[i]``."""
    n = len(lengths)
    return WeightedGraphSpace(range(n), [weight] * n,
                              [(i, (i + 1) % n, lengths[i]) for i in range(n)])


def complete_graph(n, length=1.0, weight=1.0):
    return WeightedGraphSpace(range(n), [weight] * n,
                              [(i, j, length) for i in range(n) for j in range(i + 1, n)])


def grid_graph(nx, ny, spacing=1.0, weight=1.0):
    """``nx x ny`` lattice; node ``i + nx*j`` sits at ``(i, j)``."""
    edges = []
    for j in range(ny):
        for i in range(nx):
            k = i + nx * j
            if i + 1 < nx:
                edges.append((k, k + 1, spacing))
            if j + 1 < ny:
                edges.append((k, k + nx, spacing))
    return WeightedGraphSpace(range(nx * ny), [weight] * (nx * ny), edges)


def grid_index(nx, i, j):
    return i + nx * j


# ------------------------------------------------------------------------ balls

@dataclass(frozen=True)
class Ball:
    """Open ball ``{y : d(center, y) < radius}``; ``members`` are node indices."""

    center: int
    radius: float
    members: np.ndarray = field(repr=False)
    measure: float

    def member_ids(self, space):
        return {int(space.node_ids[i]) for i in self.members}

    def __len__(self):
        return len(self.members)


def ball(space, center, radius):
    """Open ball around node id ``center``."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    c = space.idx(center)
    members = np.flatnonzero(space.distances_from(c) < radius)
    return Ball(int(center), float(radius), members, float(space.weights[members].sum()))


def ball_masses(space, centers, radii):
    """Table ``M[i, j] = mu(B(centers[i], radii[j]))`` for node indices ``centers``."""
    radii = np.asarray(radii, dtype=float)
    out = np.empty((len(centers), len(radii)))
    for row, c in enumerate(centers):
        d = space.distances_from(c)
        order = np.argsort(d, kind="stable")
        cum = np.concatenate([[0.0], np.cumsum(space.weights[order])])
        out[row] = cum[np.searchsorted(d[order], radii, side="left")]
    return out


# ------------------------------------------------------------------- windows

def _check_window(space, window, need_double=True, saturate=False):
    r_min, r_max = float(window[0]), float(window[1])
    if not (r_min <= r_max) or r_max <= 0:
        raise WindowError(f"empty radius window {window}")
    if r_min < space.max_edge_length:
        raise WindowError(
            f"r_min={r_min} is below the atomic scale (max edge length {space.max_edge_length})")
    bound = 2 * r_max if need_double else r_max
    if not saturate and bound > space.diameter:
        raise WindowError(f"window {window} too large for diameter {space.diameter}")
    return r_min, r_max


def default_window(space):
    """Mesoscopic window ``[max edge length, diameter / 4]``.

    On spaces whose diameter is under eight edge lengths the upper end is
    raised to twice the max edge length so that balls hold at least two nodes.
    """
    ell = space.max_edge_length
    return (ell, max(2 * ell, space.diameter / 4))


def _center_indices(space, centers):
    if centers is None:
        return np.arange(space.n_nodes)
    return np.array([space.idx(c) for c in centers], dtype=np.int64)


def _critical_radii(space, centers, r_min, r_max):
    """Radii where a ball or its double changes, plus the window end points."""
    d = np.unique(np.concatenate([space.distances_from(c) for c in centers]))
    cand = np.concatenate([d, d / 2, [r_min, r_max]])
    cand = cand[(cand >= r_min) & (cand <= r_max)]
    return np.unique(cand)


# ------------------------------------------------------------------ doubling

@dataclass
class DoublingReport:
    C_mu: float
    d_mu: float
    window: tuple
    n_samples: int
    worst_center: int
    worst_radius: float
    iterated_margin: float
    iterated_worst: dict
    iterated_samples: int

    @property
    def iterated_ok(self):
        return self.iterated_margin >= -1e-12


def doubling_constant(space, window, centers=None, radii=None, iterated=True, saturate=False):
    """Doubling constant over ``centers`` and radii in ``window``.

    ``C_mu`` is the maximum of ``mu(B(x,2r)) / mu(B(x,r))`` over the samples.
    The default radii are the critical radii of the sampled balls, which
    makes the maximum exact over the whole window for those centers. The
    iterated lower bound ``mu(B(z,r))/mu(B(y,R)) >= C_mu^-2 (r/R)^d_mu`` is
    checked for every sampled ``y``, every ``z`` in ``B(y,R)`` and ``r <= R``;
    ``iterated_margin`` is the smallest ratio minus bound. With ``saturate``
    the guard ``2 r_max <= diameter`` is lifted, for spaces too small to
    host a proper window; balls then cover the whole space.
    """
    r_min, r_max = _check_window(space, window, saturate=saturate)
    cidx = _center_indices(space, centers)
    if radii is None:
        radii = _critical_radii(space, cidx, r_min, r_max)
    radii = np.asarray(radii, dtype=float)
    if len(radii) == 0:
        raise WindowError("no radii in window")
    small = ball_masses(space, cidx, radii)
    big = ball_masses(space, cidx, 2 * radii)
    if np.any(small <= 0):
        raise AtomicScaleError("empty ball in the window; radii below the atomic scale")
    ratio = big / small
    i, j = np.unravel_index(np.argmax(ratio), ratio.shape)
    C = max(1.0, float(ratio[i, j]))
    d_mu = math.log2(C)

    margin, worst, count = math.inf, {}, 0
    if iterated:
        all_masses = ball_masses(space, np.arange(space.n_nodes), radii)
        for a, y in enumerate(cidx):
            dy = space.distances_from(y)
            for b, R in enumerate(radii):
                inside = dy < R
                sub = all_masses[inside][:, : b + 1]
                lowest = sub.min(axis=0)
                bound = C ** -2 * (radii[: b + 1] / R) ** d_mu
                gap = lowest / small[a, b] - bound
                count += int(inside.sum()) * (b + 1)
                g = int(np.argmin(gap))
                if gap[g] < margin:
                    margin = float(gap[g])
                    worst = {"y": int(space.node_ids[y]), "R": float(R), "r": float(radii[g])}
    return DoublingReport(C, d_mu, (r_min, r_max), int(ratio.size), int(space.node_ids[cidx[i]]),
                          float(radii[j]), margin, worst, count)


# ------------------------------------------------------------ annular decay

@dataclass
class AnnularReport:
    c: float
    alpha: float
    alpha_raw: float
    intercept: float
    n_samples: int
    n_fitted: int
    window: tuple


def annular_decay_fit(space, window, delta_grid, centers=None, radii=None, min_shell=None,
                      saturate=False):
    """Fit and certify ``mu(B(x,r) minus B(x,(1-delta)r)) <= c delta^alpha mu(B(x,r))``.

    The slope of log(shell ratio) against log(delta) gives ``alpha_raw``.
    Only samples whose shell is at least ``min_shell`` wide (``delta * r``,
    default the max edge length) and nonempty enter the fit, since thinner
    shells resolve the lattice rather than the geometry. ``alpha`` is the
    slope clamped to ``(0, 1]``; ``c`` is inflated until every sample,
    fitted or not, satisfies the inequality with the clamped exponent.
    """
    r_min, r_max = _check_window(space, window, need_double=False, saturate=saturate)
    deltas = np.asarray(delta_grid, dtype=float)
    if len(deltas) == 0 or np.any((deltas <= 0) | (deltas >= 1)):
        raise ValueError("delta_grid must be nonempty with entries in (0, 1)")
    if min_shell is None:
        min_shell = space.max_edge_length
    cidx = _center_indices(space, centers)
    if radii is None:
        radii = np.linspace(r_min, r_max, 17)
    radii = np.asarray(radii, dtype=float)
    outer = ball_masses(space, cidx, radii)
    shells, dgrid, wide = [], [], []
    for delta in deltas:
        inner = ball_masses(space, cidx, (1 - delta) * radii)
        shells.append((outer - inner) / outer)
        dgrid.append(np.full(outer.shape, delta))
        wide.append(np.broadcast_to(delta * radii >= min_shell * (1 - 1e-12), outer.shape))
    ratio = np.stack(shells).ravel()
    dd = np.stack(dgrid).ravel()
    use = (ratio > 0) & np.stack(wide).ravel()
    if not np.any(ratio > 0):
        raise AtomicScaleError("every annulus is empty; window is at the atomic scale")
    if not np.any(use):
        use = ratio > 0
    x, y = np.log(dd[use]), np.log(ratio[use])
    if np.ptp(x) > 0:
        slope, intercept = np.polyfit(x, y, 1)
    else:
        slope, intercept = 1.0, float(np.max(y - x))
    alpha = float(min(1.0, max(slope, 1e-6)))
    c = max(1.0, float(np.max(ratio / dd ** alpha)))
    return AnnularReport(c, alpha, float(slope), float(intercept), int(ratio.size), int(use.sum()),
                         (r_min, r_max))


# ---------------------------------------------------------------- Poincaré

def _ball_subgraph(space, members):
    """Edge mask and local endpoint indices of the subgraph induced on ``members``."""
    local = -np.ones(space.n_nodes, dtype=np.int64)
    local[members] = np.arange(len(members))
    keep = (local[space.edge_a] >= 0) & (local[space.edge_b] >= 0)
    return keep, local[space.edge_a[keep]], local[space.edge_b[keep]]


def poincare_ratio(space, v, ball_members, dilated_members, radius, p, q):
    """Poincaré quotient of one probe on ``B`` and its dilation ``tau B``.

    Numerator ``(avg_B |v - v_B|^q)^(1/q)``; denominator
    ``r (avg_{tau B} |Dv|_2^p)^(1/p)`` where ``|Dv|_2(x)`` is the Euclidean norm
    of the derivatives on edges of ``tau B`` incident to ``x``. Returns 0 for
    a probe constant on ``B`` and ``inf`` when only the denominator vanishes.
    """
    w = space.weights
    vb = v[ball_members]
    mb = w[ball_members]
    mean = np.dot(mb, vb) / mb.sum()
    num = (np.dot(mb, np.abs(vb - mean) ** q) / mb.sum()) ** (1.0 / q)
    if num <= 1e-14 * max(1.0, np.abs(vb).max()):
        return 0.0
    keep, la, lb = _ball_subgraph(space, dilated_members)
    dv = (v[space.edge_b[keep]] - v[space.edge_a[keep]]) / space.lengths[keep]
    sq = np.zeros(len(dilated_members))
    np.add.at(sq, la, dv ** 2)
    np.add.at(sq, lb, dv ** 2)
    md = w[dilated_members]
    den = radius * (np.dot(md, np.sqrt(sq) ** p) / md.sum()) ** (1.0 / p)
    if den == 0:
        return math.inf
    return float(num / den)


def spectral_poincare(space, ball_members, dilated_members, radius):
    """Exact ``p = q = 2`` Poincaré quotient and its extremizer.

    Solves the generalized eigenproblem of the ball's centered mass form
    against the Neumann energy ``sum_e (mu_a + mu_b) (Dv_e)^2`` on the
    dilated ball. Returns ``(value, extremizer)`` with the extremizer as a
    full node function (zero off the dilated ball).
    """
    w = space.weights
    n_loc = len(dilated_members)
    keep, la, lb = _ball_subgraph(space, dilated_members)
    ew = (w[space.edge_a[keep]] + w[space.edge_b[keep]]) / space.lengths[keep] ** 2
    L = np.zeros((n_loc, n_loc))
    np.add.at(L, (la, la), ew)
    np.add.at(L, (lb, lb), ew)
    np.add.at(L, (la, lb), -ew)
    np.add.at(L, (lb, la), -ew)
    pos = np.searchsorted(dilated_members, ball_members)
    mb = np.zeros(n_loc)
    mb[pos] = w[ball_members]
    Mb = mb.sum()
    sel = np.zeros((n_loc, n_loc))
    sel[pos, pos] = 1.0
    C = np.diag(mb) - np.outer(mb, mb) / Mb
    lam, U = linalg.eigh(L)
    nz = lam > 1e-10 * max(1.0, lam.max())
    if not np.any(nz):
        return 0.0, np.zeros(space.n_nodes)
    half = U[:, nz] / np.sqrt(lam[nz])
    S = half.T @ C @ half
    s_val, s_vec = linalg.eigh(S)
    top = float(max(s_val[-1], 0.0))
    md = w[dilated_members].sum()
    value = math.sqrt(top * md / Mb) / radius
    vec_loc = half @ s_vec[:, -1]
    v = np.zeros(space.n_nodes)
    v[dilated_members] = vec_loc
    return value, v


@dataclass
class BallEstimate:
    center: int
    radius: float
    tau: int
    probe_sup: float
    spectral: float | None
    n_probes: int


@dataclass
class PoincareReport:
    P0: float
    tau_dilation: int
    p: float
    q: float
    window: tuple
    estimates: list
    n_probes: int
    per_tau: dict
    P0_spectral: float | None = None


def _probes(space, members, rng, n_random):
    """Random, distance and coordinate-style probe functions supported on the whole graph."""
    probes = []
    for _ in range(n_random):
        probes.append(rng.standard_normal(space.n_nodes))
    picks = rng.choice(members, size=min(len(members), 4), replace=False)
    for y in picks:
        probes.append(space.distances_from(int(y)).copy())
    return probes


def poincare_estimate(space, p, q, window, centers=None, radii=None, taus=(1, 2), n_random=8,
                      seed=0, stability=2.0, extra_probes=None, saturate=False):
    """Probe-based lower estimate of the weak ``(q, p)``-Poincaré constant.

    For each sampled ball and dilation ``tau`` the estimate is the largest
    :func:`poincare_ratio` over the probe set (random functions, distance
    functions, the spectral extremizer of the ``p = q = 2`` problem and any
    ``extra_probes``). The returned ``tau_dilation`` is the smallest tau whose
    per-radius maxima agree within ``stability``; ``P0`` is the estimate at
    that tau.
    """
    if p <= 1 or q < 1:
        raise ValueError("need p > 1 and q >= 1")
    r_min, r_max = _check_window(space, window, need_double=False, saturate=saturate)
    rng = np.random.default_rng(seed)
    if centers is None:
        k = min(space.n_nodes, 16)
        centers = space.node_ids[np.sort(rng.choice(space.n_nodes, size=k, replace=False))]
    if radii is None:
        radii = np.linspace(r_min, r_max, 5)
    spectral_case = (p == 2 and q == 2)
    estimates, per_tau = [], {}
    n_probes = 0
    for tau in taus:
        per_radius = {}
        for c in centers:
            for r in radii:
                B = ball(space, c, r)
                TB = ball(space, c, tau * r)
                if len(B) < 2:
                    continue
                spec_val, spec_vec = spectral_poincare(space, B.members, TB.members, r)
                probes = _probes(space, B.members, rng, n_random) + [spec_vec]
                if extra_probes:
                    probes.extend(extra_probes)
                best = max(poincare_ratio(space, v, B.members, TB.members, r, p, q) for v in probes)
                n_probes += len(probes)
                estimates.append(BallEstimate(int(c), float(r), int(tau), best,
                                              spec_val if spectral_case else None, len(probes)))
                per_radius[float(r)] = max(per_radius.get(float(r), 0.0), best)
        per_tau[int(tau)] = per_radius
    if not estimates:
        raise AtomicScaleError("every sampled ball is a single node")
    chosen = max(taus)
    for tau in sorted(taus):
        vals = np.array([v for v in per_tau[int(tau)].values() if v > 0])
        if len(vals) and vals.max() <= stability * vals.min():
            chosen = tau
            break
    P0 = max(e.probe_sup for e in estimates if e.tau == chosen)
    P0_spec = None
    if spectral_case:
        P0_spec = max(e.spectral for e in estimates if e.tau == chosen)
    return PoincareReport(float(P0), int(chosen), float(p), float(q), (r_min, r_max), estimates,
                          n_probes, per_tau, P0_spec)


# ---------------------------------------------------------------- Sobolev

def sobolev_exponent(d_mu, p):
    """Sobolev exponent: ``d p / (d - p)`` when ``1 < p < d``, else ``2 p``."""
    if d_mu == p:
        warnings.warn("d_mu equals p; perturbing d_mu by machine epsilon", RuntimeWarning)
        d_mu = d_mu * (1 + np.finfo(float).eps)
    if 1 < p < d_mu:
        return d_mu * p / (d_mu - p)
    return 2.0 * p


def _sobolev_probes(space, B, rng, n_random):
    members = B.members
    c = space.idx(B.center)
    d = space.distances_from(c)
    probes = []
    for frac in (1.0, 0.75, 0.5, 0.25):
        v = np.clip(frac * B.radius - d, 0.0, None)
        v[d >= B.radius] = 0.0
        probes.append(v)
    ind = np.zeros(space.n_nodes)
    ind[c] = 1.0
    probes.append(ind)
    for _ in range(n_random):
        v = np.zeros(space.n_nodes)
        v[members] = rng.random(len(members))
        probes.append(v)
    # first Dirichlet mode of the ball
    from .calculus import dirichlet_mode
    probes.append(dirichlet_mode(space, members))
    return [v for v in probes if np.any(v != 0)]


def sobolev_estimate(space, p, kappa, window, centers=None, radii=None, n_random=4, seed=0,
                     saturate=False):
    """Worst Sobolev ratio with constant 1 over compactly supported probes in sampled balls."""
    from .calculus import sobolev_check

    r_min, r_max = _check_window(space, window, need_double=False, saturate=saturate)
    rng = np.random.default_rng(seed)
    if centers is None:
        k = min(space.n_nodes, 16)
        centers = space.node_ids[np.sort(rng.choice(space.n_nodes, size=k, replace=False))]
    if radii is None:
        radii = np.linspace(r_min, r_max, 5)
    worst, count = 0.0, 0
    for c in centers:
        for r in radii:
            B = ball(space, c, r)
            if len(B.members) == space.n_nodes:
                continue  # no compactly supported probes when the ball is everything
            for v in _sobolev_probes(space, B, rng, n_random):
                worst = max(worst, sobolev_check(space, v, c, r, p, kappa, 1.0))
                count += 1
    if count == 0:
        raise DegenerateError("no admissible Sobolev probes")
    return worst, count


# ------------------------------------------------------------ aggregation

@dataclass
class StructuralConstants:
    C_mu: float
    d_mu: float
    annular_c: float
    annular_alpha: float
    annular_alpha_raw: float
    P0: float
    tau_dilation: int
    sobolev_C: float
    kappa: float
    p: float
    q: float
    radius_window: tuple
    samples: dict = field(default_factory=dict)

    def to_dict(self):
        out = asdict(self)
        out["radius_window"] = list(self.radius_window)
        return out


DEFAULT_DELTAS = (0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5)


def structural_report(space, p, window=None, q=None, centers=None, seed=0, delta_grid=DEFAULT_DELTAS,
                      saturate=None):
    """Aggregate every structural constant for exponent ``p`` over ``window``.

    ``q`` defaults to ``(1 + p) / 2``. Doubling is evaluated exhaustively on
    ``centers`` (all nodes by default); Poincaré and Sobolev on a seeded
    sample of at most 16 balls. ``saturate`` (default: automatic) lifts the
    doubling guard when ``2 r_max`` exceeds the diameter, and is recorded in
    ``samples``.
    """
    if p <= 2:
        raise ValueError("structural report is defined for p > 2")
    if window is None:
        window = default_window(space)
    q = (1 + p) / 2 if q is None else q
    if saturate is None:
        saturate = 2 * float(window[1]) > space.diameter
    dbl = doubling_constant(space, window, centers=centers, saturate=saturate)
    ann = annular_decay_fit(space, window, delta_grid, centers=centers, saturate=saturate)
    pc = poincare_estimate(space, p, q, window, seed=seed, saturate=saturate)
    kappa = sobolev_exponent(dbl.d_mu, p)
    try:
        sob, n_sob = sobolev_estimate(space, p, kappa, window, seed=seed, saturate=saturate)
    except DegenerateError:
        sob, n_sob = math.nan, 0
    samples = {"doubling": dbl.n_samples, "iterated": dbl.iterated_samples,
               "iterated_margin": dbl.iterated_margin, "annular": ann.n_samples,
               "poincare_probes": pc.n_probes, "sobolev_probes": n_sob,
               "saturated": bool(saturate)}
    return StructuralConstants(dbl.C_mu, dbl.d_mu, ann.c, ann.alpha, ann.alpha_raw, pc.P0,
                               pc.tau_dilation, sob, kappa, float(p), float(q),
                               tuple(dbl.window), samples)
