"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np

_CHUNK = 4096


def _iter_simple_paths(indptr, indices, eids, max_paths):
    """Yield ``(start, end, edge_ids)`` for every simple path with at least one edge."""
    n = len(indptr) - 1
    count = 0
    for s in range(n):
        visited = [False] * n
        visited[s] = True
        stack = [(s, int(indptr[s]))]
        edges = []
        while stack:
            v, ptr = stack[-1]
            if ptr >= indptr[v + 1]:
                stack.pop()
                visited[v] = False
                if edges:
                    edges.pop()
                continue
            stack[-1] = (v, ptr + 1)
            w = int(indices[ptr])
            if visited[w]:
                continue
            edges.append(int(eids[ptr]))
            yield s, w, tuple(edges)
            count += 1
            if max_paths >= 0 and count >= max_paths:
                return
            visited[w] = True
            stack.append((w, int(indptr[w])))


def max_path_violation(indptr, indices, eids, lengths, U, G, max_paths=-1):
    U = np.asarray(U, dtype=float)
    weighted = np.asarray(G, dtype=float) * np.asarray(lengths, dtype=float)[None, :]
    worst = np.full(U.shape[0], -np.inf)
    n_paths = 0
    complete = True
    starts, ends, rows, cols = [], [], [], []

    def flush():
        if not starts:
            return
        P = np.zeros((len(starts), weighted.shape[1]))
        P[rows, cols] = 1.0
        S = P @ weighted.T
        diff = np.abs(U[:, starts] - U[:, ends]).T
        np.maximum(worst, (diff - S).max(axis=0), out=worst)
        starts.clear(), ends.clear(), rows.clear(), cols.clear()

    for s, w, edges in _iter_simple_paths(indptr, indices, eids, max_paths):
        i = len(starts)
        starts.append(s)
        ends.append(w)
        rows.extend([i] * len(edges))
        cols.extend(edges)
        n_paths += 1
        if len(starts) >= _CHUNK:
            flush()
    flush()
    if max_paths >= 0 and n_paths >= max_paths:
        complete = False
    return worst, n_paths, complete


def node_max(edge_a, edge_b, values, n):
    values = np.asarray(values, dtype=float)
    T, m = values.shape
    out = np.zeros((T, n))
    if m == 0:
        return out
    ends = np.concatenate([edge_a, edge_b])
    order = np.argsort(ends, kind="stable")
    sorted_nodes = ends[order]
    vals = np.concatenate([values, values], axis=1)[:, order]
    nodes, starts = np.unique(sorted_nodes, return_index=True)
    out[:, nodes] = np.maximum(np.maximum.reduceat(vals, starts, axis=1), 0.0)
    return out
