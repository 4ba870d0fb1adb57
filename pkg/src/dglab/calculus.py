"""
Discrete differential calculus on a :class:`~dglab.space.WeightedGraphSpace`.

The signed edge difference ``Du(e) = (u(b) - u(a)) / l_e`` plays the part of a
linear derivative and ``|Du|`` that of the minimal upper gradient along edge
paths. Space-time functions are stored as a ``(T, n)`` array of frames on a
uniform time grid.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from scipy import linalg

from ._backend import kernels
from .errors import DegenerateError, TrajectoryError

if TYPE_CHECKING:
    from .space import WeightedGraphSpace

EXHAUSTIVE_NODE_LIMIT = 12


# ------------------------------------------------------------- trajectories

@dataclass
class SpaceTimeFunction:
    """Node values on a uniform time grid.

    Attributes
    ----------
    space : WeightedGraphSpace
    frames : ndarray, shape (T, n)
        ``frames[k]`` is the node function at time ``t_start + k * time_step``.
    time_step : float
    t_start : float
    """

    space: "WeightedGraphSpace"
    frames: np.ndarray
    time_step: float
    t_start: float = 0.0

    def __post_init__(self):
        self.frames = np.array(self.frames, dtype=float, ndmin=2)
        if self.frames.ndim != 2 or self.frames.shape[1] != self.space.n_nodes:
            raise TrajectoryError(
                f"frames must have shape (T, {self.space.n_nodes}), got {self.frames.shape}")
        if self.frames.shape[0] < 2:
            raise TrajectoryError("a space-time function needs at least 2 frames")
        if not np.all(np.isfinite(self.frames)):
            raise TrajectoryError("frames contain non-finite values")
        if not (self.time_step > 0 and math.isfinite(self.time_step)):
            raise TrajectoryError(f"time_step must be positive, got {self.time_step}")
        self.time_step = float(self.time_step)
        self.t_start = float(self.t_start)

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def times(self):
        return self.t_start + self.time_step * np.arange(self.n_frames)

    @property
    def t_end(self):
        return self.t_start + self.time_step * (self.n_frames - 1)

    def frame_index(self, t, tol=1e-9):
        """Index of the last frame at or before time ``t``."""
        k = math.floor((t - self.t_start) / self.time_step + tol)
        if k < 0 or k >= self.n_frames:
            raise TrajectoryError(f"time {t} outside [{self.t_start}, {self.t_end}]")
        return k

    def with_frames(self, frames, t_start=None):
        return SpaceTimeFunction(self.space, frames, self.time_step,
                                 self.t_start if t_start is None else t_start)


# ------------------------------------------------------------- derivatives

def cheeger_derivative(space, u):
    """Signed edge differences of ``u``.

    ``u`` may be a single node function of shape ``(n,)`` or a stack of
    frames ``(T, n)``; the result has shape ``(m,)`` or ``(T, m)``.
    """
    u = np.asarray(u, dtype=float)
    D = space.difference_operator
    if u.ndim == 1:
        return D @ u
    return (D @ u.T).T


def upper_gradient(space, u):
    """Edge gradient ``|Du|`` and node gradient (max over incident edges)."""
    edge_g = np.abs(cheeger_derivative(space, u))
    node_g = node_max(space, edge_g)
    return edge_g, node_g


def node_max(space, edge_values):
    """Maximum of nonnegative edge values over the edges incident to each node."""
    vals = np.asarray(edge_values, dtype=float)
    single = vals.ndim == 1
    out = kernels.node_max(space.edge_a, space.edge_b, np.ascontiguousarray(np.atleast_2d(vals)),
                           space.n_nodes)
    return out[0] if single else out


def euclidean_gradient(space, u):
    """Euclidean norm ``|Du|_2(x)`` of the derivatives on edges incident to ``x``."""
    du = cheeger_derivative(space, u)
    sq = du ** 2
    if sq.ndim == 1:
        out = np.bincount(space.edge_a, sq, space.n_nodes) + np.bincount(space.edge_b, sq, space.n_nodes)
        return np.sqrt(out)
    out = np.zeros((sq.shape[0], space.n_nodes))
    for ends in (space.edge_a, space.edge_b):
        np.add.at(out, (slice(None), ends), sq)
    return np.sqrt(out)


# --------------------------------------------------------- path inequality

@dataclass
class PathCheck:
    """Outcome of a path-inequality scan."""

    worst: float
    worst_per_function: np.ndarray
    n_paths: int
    exhaustive: bool
    seed: int | None = None


def _sample_paths(space, n_paths, rng, max_len):
    """Self-avoiding random walks as edge-id lists."""
    indptr, indices, eids = space.neighbor_csr
    out = []
    for _ in range(n_paths):
        s = int(rng.integers(space.n_nodes))
        seen = {s}
        v, path = s, []
        for _ in range(max_len):
            nbrs = [(int(indices[k]), int(eids[k])) for k in range(indptr[v], indptr[v + 1])
                    if int(indices[k]) not in seen]
            if not nbrs:
                break
            w, e = nbrs[int(rng.integers(len(nbrs)))]
            path.append(e)
            seen.add(w)
            v = w
            out.append((s, w, list(path)))
    return out


def path_inequality_check(space, u, edge_g, exhaustive=None, max_paths=2_000_000, n_samples=20000,
                          seed=0, backend=None):
    """Worst violation of ``|u(x) - u(y)| <= sum_{e in path} g(e) l_e`` over simple edge paths.

    Parameters
    ----------
    u : array, shape (n,) or (k, n)
        One or several node functions.
    edge_g : array, shape (m,) or (k, m)
        Candidate edge gradients, one row per function.
    exhaustive : bool, optional
        Enumerate every simple path. Defaults to True for graphs with at most
        12 nodes. If enumeration exceeds ``max_paths`` the check falls back
        to ``n_samples`` random self-avoiding paths drawn with ``seed``.
    """
    from ._backend import get_kernels

    kern = get_kernels(backend)
    U = np.ascontiguousarray(np.atleast_2d(np.asarray(u, dtype=float)))
    G = np.ascontiguousarray(np.atleast_2d(np.asarray(edge_g, dtype=float)))
    if G.shape[0] == 1 and U.shape[0] > 1:
        G = np.repeat(G, U.shape[0], axis=0)
    if exhaustive is None:
        exhaustive = space.n_nodes <= EXHAUSTIVE_NODE_LIMIT
    if exhaustive:
        indptr, indices, eids = space.neighbor_csr
        worst, n_paths, complete = kern.max_path_violation(indptr, indices, eids, space.lengths, U, G,
                                                           max_paths)
        if complete:
            worst = np.asarray(worst)
            return PathCheck(float(worst.max()), worst, int(n_paths), True)
    rng = np.random.default_rng(seed)
    paths = _sample_paths(space, n_samples, rng, space.n_nodes)
    worst = np.full(U.shape[0], -np.inf)
    weighted = G * space.lengths
    for s, w, edges in paths:
        viol = np.abs(U[:, s] - U[:, w]) - weighted[:, edges].sum(axis=1)
        np.maximum(worst, viol, out=worst)
    return PathCheck(float(worst.max()), worst, len(paths), False, seed)


def subadditivity_check(space, u, v, tol=1e-12):
    """Check the sum and product rules for discrete gradients edge-wise and node-wise.

    The product rule bound uses the larger endpoint value of ``|u|`` and
    ``|v|`` on each edge.
    """
    gu, nu = upper_gradient(space, u)
    gv, nv = upper_gradient(space, v)
    gs, ns = upper_gradient(space, np.asarray(u) + np.asarray(v))
    gp, _ = upper_gradient(space, np.asarray(u) * np.asarray(v))
    a, b = space.edge_a, space.edge_b
    su = np.maximum(np.abs(u[a]), np.abs(u[b]))
    sv = np.maximum(np.abs(v[a]), np.abs(v[b]))
    scale = 1.0 + np.abs(gu) + np.abs(gv)
    ok_edge = np.all(gs <= gu + gv + tol * scale)
    ok_node = np.all(ns <= nu + nv + tol * (1 + nu + nv))
    ok_prod = np.all(gp <= su * gv + sv * gu + tol * (1 + su * gv + sv * gu))
    return bool(ok_edge and ok_node and ok_prod)


# ------------------------------------------------------------ mollification

def mollifier_weights(h, time_step):
    """Normalized triangular weights on the offsets ``j`` with ``|j| * dt < h``."""
    if h < time_step * (1 - 1e-12):
        raise TrajectoryError(f"mollifier width h={h} is smaller than the time step {time_step}")
    J = int(math.ceil(h / time_step - 1e-9)) - 1
    J = max(J, 0)
    offs = np.arange(-J, J + 1)
    w = 1.0 - np.abs(offs) * time_step / h
    return offs, w / w.sum()


def time_mollify(u, h):
    """Mollify a :class:`SpaceTimeFunction` in time with a triangular kernel of half width ``h``.

    Only interior levels where the whole kernel window fits are returned, so
    the result starts ``J`` frames later and ends ``J`` frames earlier.
    """
    offs, w = mollifier_weights(h, u.time_step)
    J = int(offs[-1])
    T = u.n_frames
    if T < 2 * J + 2:
        raise TrajectoryError(
            f"mollifier window needs a trajectory of at least {2 * J + 2} frames, got {T}")
    n_out = T - 2 * J
    out = np.zeros((n_out, u.frames.shape[1]))
    for j, wj in zip(offs, w):
        # u_h(t_k) = sum_j w_j u(t_{k - j})
        out += wj * u.frames[J - j: J - j + n_out]
    return u.with_frames(out, t_start=u.t_start + J * u.time_step)


def mollify_array(values, h, time_step):
    """Apply the same time mollifier to an arbitrary ``(T, ...)`` array."""
    offs, w = mollifier_weights(h, time_step)
    J = int(offs[-1])
    T = values.shape[0]
    if T < 2 * J + 2:
        raise TrajectoryError(
            f"mollifier window needs a trajectory of at least {2 * J + 2} frames, got {T}")
    n_out = T - 2 * J
    out = np.zeros((n_out,) + values.shape[1:])
    for j, wj in zip(offs, w):
        out += wj * values[J - j: J - j + n_out]
    return out


# ----------------------------------------------------------------- Sobolev

def sobolev_check(space, v, center, radius, p, kappa, C_S=1.0, tol=1e-12):
    """Sobolev quotient of ``v`` supported in the open ball ``B(center, radius)``.

    Returns ``(avg_B |v|^kappa)^(1/kappa) / (C_S r (avg_B node_g^p)^(1/p))``,
    where ``node_g`` is the node gradient of ``v`` on the whole graph.
    """
    from .space import ball

    v = np.asarray(v, dtype=float)
    B = ball(space, center, radius)
    outside = np.ones(space.n_nodes, dtype=bool)
    outside[B.members] = False
    if np.any(np.abs(v[outside]) > tol):
        raise DegenerateError("probe is not supported in the ball")
    if not np.any(v[B.members] != 0):
        raise DegenerateError("zero probe: Sobolev ratio undefined")
    _, ng = upper_gradient(space, v)
    w = space.weights[B.members]
    num = (np.dot(w, np.abs(v[B.members]) ** kappa) / w.sum()) ** (1.0 / kappa)
    den = C_S * radius * (np.dot(w, ng[B.members] ** p) / w.sum()) ** (1.0 / p)
    if den == 0:
        return math.inf
    return float(num / den)


def dirichlet_mode(space, members):
    """First Dirichlet eigenfunction of the weighted graph Laplacian on ``members``.

    Nonnegative, zero off ``members``; edges leaving the set act as a zero
    boundary condition.
    """
    members = np.asarray(members, dtype=np.int64)
    v = np.zeros(space.n_nodes)
    if len(members) == 0:
        return v
    local = -np.ones(space.n_nodes, dtype=np.int64)
    local[members] = np.arange(len(members))
    k = len(members)
    L = np.zeros((k, k))
    ew = space.edge_measure / space.lengths ** 2
    la, lb = local[space.edge_a], local[space.edge_b]
    for e in range(space.n_edges):
        a, b = la[e], lb[e]
        if a >= 0:
            L[a, a] += ew[e]
        if b >= 0:
            L[b, b] += ew[e]
        if a >= 0 and b >= 0:
            L[a, b] -= ew[e]
            L[b, a] -= ew[e]
    if k == 1 and L[0, 0] == 0:
        v[members] = 1.0
        return v
    _, vec = linalg.eigh(L, np.diag(space.weights[members]), subset_by_index=[0, 0])
    v[members] = np.abs(vec[:, 0])
    return v


# ------------------------------------------------------------------- files

def _fmt(x):
    return "%.17g" % x


def write_trajectory(u, path):
    """Write ``u`` as CSV (header of node ids, one row per level) plus a JSON sidecar.

    Returns the list of written paths.
    """
    path = Path(path)
    lines = [",".join(str(int(i)) for i in u.space.node_ids)]
    lines.extend(",".join(_fmt(x) for x in row) for row in u.frames)
    path.write_text("\n".join(lines) + "\n")
    side = path.with_suffix(".json")
    side.write_text(json.dumps({"time_step": u.time_step, "t_start": u.t_start}, indent=2) + "\n")
    return [path, side]


def read_trajectory(path, space):
    """Inverse of :func:`write_trajectory`; node columns are matched by id."""
    path = Path(path)
    try:
        meta = json.loads(path.with_suffix(".json").read_text())
        text = path.read_text().strip().splitlines()
    except (OSError, json.JSONDecodeError) as exc:
        raise TrajectoryError(f"cannot read trajectory {path}: {exc}") from exc
    header = [int(h) for h in text[0].split(",")]
    if sorted(header) != [int(i) for i in space.node_ids]:
        raise TrajectoryError("trajectory header does not match the space's node ids")
    data = np.array([[float(x) for x in line.split(",")] for line in text[1:]], ndmin=2)
    cols = [space.idx(h) for h in header]
    frames = np.empty_like(data)
    frames[:, cols] = data
    return SpaceTimeFunction(space, frames, float(meta["time_step"]), float(meta.get("t_start", 0.0)))


def write_edge_field(space, values, path):
    """CSV dump ``a,b,value`` of an edge field in the global edge order."""
    rows = ["a,b,value"]
    for (a, b, _), x in zip(space.edges, np.asarray(values, dtype=float)):
        rows.append(f"{a},{b},{_fmt(x)}")
    Path(path).write_text("\n".join(rows) + "\n")
    return Path(path)


def read_edge_field(space, path):
    lines = Path(path).read_text().strip().splitlines()[1:]
    lookup = {(a, b): k for k, (a, b, _) in enumerate(space.edges)}
    out = np.zeros(space.n_edges)
    for line in lines:
        a, b, x = line.split(",")
        a, b = int(a), int(b)
        k = lookup[(min(a, b), max(a, b))]
        out[k] = float(x) if a < b else -float(x)
    return out
