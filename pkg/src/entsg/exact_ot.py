"""Exact quadratic optimal transport for small discrete instances.

The transportation LP is solved by the network simplex method on the dense
bipartite graph (rows = atoms of ``alpha``, columns = atoms of ``mu``).
Pivoting follows Bland's rule in row-major arc order, which makes the
result reproducible and rules out cycling.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import Degenerate, DimensionMismatch, InstanceTooLarge
from .measures import DiscreteMeasure

MAX_ARCS = 10 ** 6


@dataclass(frozen=True, eq=False)
class Coupling:
    matrix: np.ndarray

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.matrix))

    def row_sums(self):
        return self.matrix.sum(axis=1)

    def col_sums(self):
        return self.matrix.sum(axis=0)


def sq_cost(x, y):
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _initial_basis(a, b, cost):
    """Matrix-minimum starting tree.

    Cells are visited in increasing cost (ties in row-major order). Each
    allocation exhausts a row or a column, so positive-flow cells form a
    forest; zero-flow cells are then added in the same order until the
    basis is a spanning tree with ``n + m - 1`` cells.
    """
    n, m = cost.shape
    order = np.argsort(cost.ravel(), kind="stable")
    supply = a.copy()
    demand = b.copy()
    parent = list(range(n + m))

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    flow = {}
    for idx in order:
        i, j = divmod(int(idx), m)
        if supply[i] > 0 and demand[j] > 0:
            q = min(supply[i], demand[j])
            supply[i] -= q
            demand[j] -= q
            flow[(i, j)] = q
            parent[find(i)] = find(n + j)
    if len(flow) < n + m - 1:
        for idx in order:
            i, j = divmod(int(idx), m)
            ri, rj = find(i), find(n + j)
            if ri != rj:
                parent[ri] = rj
                flow[(i, j)] = 0.0
                if len(flow) == n + m - 1:
                    break
    return list(flow), flow


class _Tree:
    def __init__(self, n, m, basis):
        self.n, self.m = n, m
        self.adj = [set() for _ in range(n + m)]
        for i, j in basis:
            self.add(i, j)

    def add(self, i, j):
        self.adj[i].add(self.n + j)
        self.adj[self.n + j].add(i)

    def remove(self, i, j):
        self.adj[i].discard(self.n + j)
        self.adj[self.n + j].discard(i)

    def potentials(self, cost):
        n = self.n
        row = np.zeros(n)
        col = np.zeros(self.m)
        seen = [False] * (n + self.m)
        seen[0] = True
        queue = deque([0])
        while queue:
            node = queue.popleft()
            for nb in self.adj[node]:
                if seen[nb]:
                    continue
                seen[nb] = True
                if node < n:
                    col[nb - n] = cost[node, nb - n] - row[node]
                else:
                    row[nb] = cost[nb, node - n] - col[node - n]
                queue.append(nb)
        return row, col

    def path(self, src, dst):
        parent = {src: None}
        queue = deque([src])
        while queue:
            node = queue.popleft()
            if node == dst:
                break
            for nb in self.adj[node]:
                if nb not in parent:
                    parent[nb] = node
                    queue.append(nb)
        nodes = [dst]
        while nodes[-1] != src:
            nodes.append(parent[nodes[-1]])
        return nodes[::-1]


def _arc(self_n, u, w):
    # tree edge between node u and node w as a (row, col) cell
    return (u, w - self_n) if u < self_n else (w, u - self_n)


def _network_simplex(a, b, cost, max_pivots):
    n, m = cost.shape
    basis, flow = _initial_basis(a, b, cost)
    tree = _Tree(n, m, basis)
    rc_tol = 1e-12 * max(1.0, float(np.abs(cost).max()))
    pivots = 0
    while True:
        row, col = tree.potentials(cost)
        reduced = cost - row[:, None] - col[None, :]
        neg = np.flatnonzero(reduced.ravel() < -rc_tol)
        if neg.size == 0:
            return flow, pivots
        if pivots >= max_pivots:
            raise Degenerate(f"network simplex exceeded {max_pivots} pivots")
        pivots += 1
        ei, ej = divmod(int(neg[0]), m)
        nodes = tree.path(ei, n + ej)
        edges = [_arc(n, nodes[k], nodes[k + 1]) for k in range(len(nodes) - 1)]
        # walking back from column ej the signs alternate -, +, -, ...
        minus = edges[::-1][0::2]
        plus = edges[::-1][1::2]
        theta = min(flow[c] for c in minus)
        leaving = min((c for c in minus if flow[c] == theta),
                      key=lambda c: c[0] * m + c[1])
        for c in minus:
            flow[c] -= theta
        for c in plus:
            flow[c] += theta
        flow[(ei, ej)] = theta
        del flow[leaving]
        tree.remove(*leaving)
        tree.add(ei, ej)


def _perturbation(n, m, scale):
    idx = np.arange(n * m, dtype=np.float64).reshape(n, m)
    return scale * 1e-11 * (idx + 1.0) / (n * m)


def w2_squared_exact(alpha: DiscreteMeasure, mu: DiscreteMeasure):
    """Squared 2-Wasserstein distance and an optimal coupling.

    Returns
    -------
    value : float
        ``min_gamma sum |x_i - y_j|^2 gamma_ij``.
    coupling : Coupling
        A basic optimal solution, with at most ``n + m - 1`` nonzeros.
    """
    if alpha.dim != mu.dim:
        raise DimensionMismatch(f"dimensions {alpha.dim} and {mu.dim} differ")
    n, m = alpha.n, mu.n
    if n * m > MAX_ARCS:
        raise InstanceTooLarge(f"{n} x {m} exceeds the dense exact-OT limit of {MAX_ARCS} arcs")
    cost = sq_cost(alpha.points, mu.points)
    a, b = alpha.weights, mu.weights
    cap = 50 * n * m + 1000
    try:
        flow, _ = _network_simplex(a, b, cost, cap)
    except Degenerate:
        scale = max(1.0, float(np.abs(cost).max()))
        flow, _ = _network_simplex(a, b, cost + _perturbation(n, m, scale), cap)
    gamma = np.zeros((n, m))
    for (i, j), q in flow.items():
        gamma[i, j] = max(q, 0.0)
    value = float(sum(cost[i, j] * gamma[i, j] for (i, j) in sorted(flow)))
    return max(value, 0.0), Coupling(gamma)


def w2(alpha: DiscreteMeasure, mu: DiscreteMeasure) -> float:
    return float(np.sqrt(w2_squared_exact(alpha, mu)[0]))
