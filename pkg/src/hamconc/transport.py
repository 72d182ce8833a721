"""Normalized Hamming metric and exact transportation distances with dual certificates.

The exact backend is a transportation simplex over the bipartite support
graph.  Costs are integer mismatch counts (Hamming distances times n), so all
pivoting decisions and dual potentials are exact integer arithmetic; only the
transported amounts are floats.  Pivot order is pinned (most negative reduced
cost, lexicographic tie-break, with a Bland fallback against degenerate
cycling) so plans are reproducible byte for byte.

The approximate backend is entropically regularized iteration, used only above
the configured support cap and always labeled, with bias bound
``reg * log(|supp mu| * |supp nu|)``.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .measures import DiscreteMeasure, MeasureError, Word, condition, marginal

#: default cap on combined support size for the exact backend
DEFAULT_EXACT_CAP = 1 << 16
#: guard on the dense cost-matrix size (cells)
MATRIX_CELL_CAP = 1 << 24
#: exact pairwise diameter is used up to this many pairs
DIAMETER_PAIR_CAP = 10_000

ENV_CAP_VAR = "HC_MAX_SUPPORT"


class SupportCapExceeded(MeasureError):
    """Raised when the exact backend would exceed its support cap.

    Callers should retry with the approximate backend (``method='sinkhorn'``)
    or raise the cap via the HC_MAX_SUPPORT environment variable.
    """


def exact_support_cap() -> int:
    value = os.environ.get(ENV_CAP_VAR)
    if value is None:
        return DEFAULT_EXACT_CAP
    return int(value)


# -----------------------------------------------------------------------------
# Ground metric
# -----------------------------------------------------------------------------
def hamming(x: Word, y: Word) -> float:
    """Fraction of coordinates where two equal-length words differ."""
    if len(x) != len(y):
        raise MeasureError(f"length mismatch: {len(x)} vs {len(y)}")
    return sum(a != b for a, b in zip(x, y)) / len(x)


def mismatch_matrix(src: Sequence[Word], tgt: Sequence[Word]) -> np.ndarray:
    """Integer matrix of coordinate mismatch counts between two word lists."""
    a = np.asarray(src, dtype=np.int64)
    b = np.asarray(tgt, dtype=np.int64)
    return (a[:, None, :] != b[None, :, :]).sum(axis=2).astype(np.int64)


def diameter(words: Sequence[Word]) -> float:
    """Diameter of a word set under the normalized Hamming metric.

    Exact pairwise computation up to ``DIAMETER_PAIR_CAP`` pairs; beyond that,
    the upper bound from per-coordinate mismatch ranges is returned.
    """
    words = list(words)
    if not words:
        return 0.0
    n = len(words[0])
    if len(words) * len(words) <= DIAMETER_PAIR_CAP:
        dm = mismatch_matrix(words, words)
        return float(dm.max()) / n
    arr = np.asarray(words)
    varying = int((arr.max(axis=0) != arr.min(axis=0)).sum())
    return varying / n


# -----------------------------------------------------------------------------
# Plans and certificates
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class TransportPlan:
    """A coupling of two measures with its cost under the normalized Hamming metric."""

    source: DiscreteMeasure
    target: DiscreteMeasure
    plan: Mapping[tuple[Word, Word], float]
    cost: float
    exact: bool = True
    bias_bound: float = 0.0
    # integer dual potentials from the solver (rows = source, cols = target)
    row_potentials: tuple[int, ...] | None = None
    col_potentials: tuple[int, ...] | None = None

    def check_marginals(self, tol: float = 1e-10) -> None:
        rows: dict[Word, float] = {}
        cols: dict[Word, float] = {}
        for (x, y), m in self.plan.items():
            rows[x] = rows.get(x, 0.0) + m
            cols[y] = cols.get(y, 0.0) + m
        for w in set(rows) | set(self.source.atoms):
            if abs(rows.get(w, 0.0) - self.source.mass(w)) > tol:
                raise MeasureError(f"row sum mismatch at {w!r}")
        for w in set(cols) | set(self.target.atoms):
            if abs(cols.get(w, 0.0) - self.target.mass(w)) > tol:
                raise MeasureError(f"column sum mismatch at {w!r}")


@dataclass(frozen=True)
class DualCertificate:
    """A 1-Lipschitz potential on the union support witnessing the transport cost."""

    potential: Mapping[Word, float]

    def lipschitz_slack(self) -> float:
        """max over support pairs of |f(x)-f(y)| - d(x,y); <= 0 means 1-Lipschitz."""
        words = sorted(self.potential)
        vals = np.array([self.potential[w] for w in words])
        dm = mismatch_matrix(words, words) / len(words[0])
        diff = np.abs(vals[:, None] - vals[None, :]) - dm
        return float(diff.max())

    def objective(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
        """integral of f d(nu) - integral of f d(mu)."""
        up = sum(self.potential[w] * m for w, m in nu.atoms.items())
        down = sum(self.potential[w] * m for w, m in mu.atoms.items())
        return up - down


# -----------------------------------------------------------------------------
# Exact backend: transportation simplex
# -----------------------------------------------------------------------------
def _northwest_corner(a: np.ndarray, b: np.ndarray):
    """Initial basic feasible solution; returns flows and the R+C-1 basis arcs."""
    nr, nc = len(a), len(b)
    rem_a = a.copy()
    rem_b = b.copy()
    flow: dict[tuple[int, int], float] = {}
    basis: list[tuple[int, int]] = []
    i = j = 0
    while True:
        q = min(rem_a[i], rem_b[j])
        flow[(i, j)] = max(q, 0.0)
        basis.append((i, j))
        rem_a[i] -= q
        rem_b[j] -= q
        if i == nr - 1 and j == nc - 1:
            break
        if j == nc - 1 or (rem_a[i] <= rem_b[j] and i < nr - 1):
            i += 1
        else:
            j += 1
    return flow, basis


def _tree_potentials(adj, cost, nr, nc):
    """Integer potentials solving u_i + v_j = c_ij on the basis tree."""
    u = np.zeros(nr, dtype=np.int64)
    v = np.zeros(nc, dtype=np.int64)
    seen = [False] * (nr + nc)
    seen[0] = True
    stack = [0]
    while stack:
        node = stack.pop()
        for nb in adj[node]:
            if seen[nb]:
                continue
            seen[nb] = True
            if node < nr:
                v[nb - nr] = int(cost[node, nb - nr]) - u[node]
            else:
                u[nb] = int(cost[nb, node - nr]) - v[node - nr]
            stack.append(nb)
    return u, v


def _tree_path(adj, start, goal):
    """Node path between two tree nodes (rows are 0..nr-1, cols nr..)."""
    parent = {start: None}
    stack = [start]
    while stack:
        node = stack.pop()
        if node == goal:
            break
        for nb in adj[node]:
            if nb not in parent:
                parent[nb] = node
                stack.append(nb)
    path = [goal]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return path[::-1]


def _solve_transport(a: np.ndarray, b: np.ndarray, cost: np.ndarray):
    """Exact transportation simplex with integer costs.

    Returns (flow dict over arcs, integer row potentials, integer col potentials).
    Entering rule: most negative reduced cost with lexicographic tie-break;
    after a long degenerate streak, falls back to Bland's rule, which cannot
    cycle.  Leaving arc: lexicographically smallest among eligible.  Potentials
    are maintained incrementally: each pivot shifts them by the entering arc's
    reduced cost on the subtree cut off by the leaving arc, keeping them exact
    integers throughout.
    """
    nr, nc = cost.shape
    scale = a.sum() / b.sum()
    b = b * scale
    flow, basis = _northwest_corner(a, b)
    adj: dict[int, set[int]] = {k: set() for k in range(nr + nc)}
    for (i, j) in basis:
        adj[i].add(nr + j)
        adj[nr + j].add(i)
    u, v = _tree_potentials(adj, cost, nr, nc)
    bland = False
    degenerate_streak = 0
    max_streak = 4 * (nr + nc)
    while True:
        red = cost - u[:, None] - v[None, :]
        if bland:
            mask = (red < 0).ravel()
            if not mask.any():
                break
            flat = int(np.argmax(mask))
        else:
            flat = int(np.argmin(red.ravel()))
            if red.ravel()[flat] >= 0:
                break
        delta = int(red.ravel()[flat])
        ei, ej = divmod(flat, nc)
        # cycle: entering arc plus the tree path from its column back to its row
        path = _tree_path(adj, nr + ej, ei)
        cycle_arcs = [(ei, ej, +1)]
        sign = -1
        for s, t in zip(path, path[1:]):
            arc = (s, t - nr) if s < nr else (t, s - nr)
            cycle_arcs.append((arc[0], arc[1], sign))
            sign = -sign
        minus = [(i, j) for i, j, sg in cycle_arcs if sg < 0]
        theta = min(flow[arc] for arc in minus)
        leaving = min(arc for arc in minus if flow[arc] <= theta)
        for i, j, sg in cycle_arcs:
            if sg > 0:
                flow[(i, j)] = flow.get((i, j), 0.0) + theta
            else:
                flow[(i, j)] = max(flow[(i, j)] - theta, 0.0)
        # swap the basis arcs and shift potentials on the cut-off side
        adj[leaving[0]].discard(nr + leaving[1])
        adj[nr + leaving[1]].discard(leaving[0])
        side = {nr + ej}
        stack = [nr + ej]
        while stack:
            node = stack.pop()
            for nb in adj[node]:
                if nb not in side:
                    side.add(nb)
                    stack.append(nb)
        for node in side:
            if node < nr:
                u[node] -= delta
            else:
                v[node - nr] += delta
        adj[ei].add(nr + ej)
        adj[nr + ej].add(ei)
        del flow[leaving]
        if theta <= 0.0:
            degenerate_streak += 1
            if degenerate_streak > max_streak:
                bland = True
        else:
            degenerate_streak = 0
    return flow, u, v


def _mcshane_potential(cost_src_union: np.ndarray, g: np.ndarray) -> np.ndarray:
    """phi(z) = min_i (g_i + c(x_i, z)), the tight 1-Lipschitz extension."""
    return (g[:, None] + cost_src_union).min(axis=0)


def transport_distance(mu: DiscreteMeasure, nu: DiscreteMeasure, *,
                       method: str = "exact",
                       cap: int | None = None,
                       reg: float = 5e-3,
                       ) -> tuple[float, TransportPlan]:
    """Transportation distance between two measures on the same space.

    ``method`` is ``'exact'`` (default; errors above the support cap),
    ``'sinkhorn'`` (always approximate), or ``'auto'`` (exact when it fits).
    """
    if mu.space != nu.space:
        raise MeasureError("transport_distance needs measures on the same space")
    n = mu.space.dimension
    src = list(mu.support)
    tgt = list(nu.support)
    cap = exact_support_cap() if cap is None else cap
    too_big = (len(src) + len(tgt) > cap) or (len(src) * len(tgt) > MATRIX_CELL_CAP)
    if method == "exact" and too_big:
        raise SupportCapExceeded(
            f"combined support {len(src)}+{len(tgt)} exceeds exact cap {cap}; "
            f"use method='sinkhorn' or raise {ENV_CAP_VAR}")
    if method == "sinkhorn" or (method == "auto" and too_big):
        return _sinkhorn_distance(mu, nu, reg=reg)

    if mu._atoms == nu._atoms:
        # identical measures: the diagonal coupling and zero potentials are an
        # exact primal-dual optimal pair
        plan = {(w, w): m for w, m in mu.atoms.items()}
        tp = TransportPlan(mu, nu, plan, 0.0, exact=True,
                           row_potentials=(0,) * len(src),
                           col_potentials=(0,) * len(tgt))
        return 0.0, tp

    a = np.array([mu.atoms[w] for w in src])
    b = np.array([nu.atoms[w] for w in tgt])
    cost = mismatch_matrix(src, tgt)
    flow, u, v = _solve_transport(a, b, cost)
    plan = {}
    total = 0.0
    for (i, j) in sorted(flow):
        m = flow[(i, j)]
        if m > 0.0:
            plan[(src[i], tgt[j])] = m
            total += m * cost[i, j]
    cost_value = total / n
    tp = TransportPlan(mu, nu, plan, cost_value, exact=True,
                       row_potentials=tuple(int(x) for x in u),
                       col_potentials=tuple(int(x) for x in v))
    return cost_value, tp


def dual_gap(plan: TransportPlan) -> tuple[DualCertificate, float]:
    """Optimal-potential certificate and the primal-dual gap for a plan.

    The certificate is the tight 1-Lipschitz extension of the solver's integer
    potentials to the union support; for an optimal plan the gap is float
    round-off only.
    """
    mu, nu = plan.source, plan.target
    if plan.row_potentials is None or not plan.exact:
        cost, solved = transport_distance(mu, nu, method="exact")
        plan = solved
    n = mu.space.dimension
    src = list(mu.support)
    tgt = list(nu.support)
    v = np.array(plan.col_potentials, dtype=np.int64)
    cost_st = mismatch_matrix(src, tgt)
    # g_i = max_j (v_j - c_ij): the conjugate source potential
    g = (v[None, :] - cost_st).max(axis=1)
    union = sorted(set(src) | set(tgt))
    cost_su = mismatch_matrix(src, union)
    phi = _mcshane_potential(cost_su, g) / n
    cert = DualCertificate({w: float(p) for w, p in zip(union, phi)})
    gap = plan.cost - cert.objective(mu, nu)
    if cert.lipschitz_slack() > 1e-10:
        raise MeasureError("internal error: dual potential is not 1-Lipschitz")
    return cert, gap


# -----------------------------------------------------------------------------
# Approximate backend
# -----------------------------------------------------------------------------
def _sinkhorn_distance(mu: DiscreteMeasure, nu: DiscreteMeasure, *,
                       reg: float, max_iters: int = 2000,
                       tol: float = 1e-12) -> tuple[float, TransportPlan]:
    src = list(mu.support)
    tgt = list(nu.support)
    a = np.array([mu.atoms[w] for w in src])
    b = np.array([nu.atoms[w] for w in tgt])
    n = mu.space.dimension
    cost = mismatch_matrix(src, tgt) / n
    log_a = np.log(a)
    log_b = np.log(b)
    f = np.zeros(len(src))
    g = np.zeros(len(tgt))
    m = -cost / reg
    for _ in range(max_iters):
        f_new = reg * (log_a - _logsumexp(m + g[None, :] / reg, axis=1))
        g_new = reg * (log_b - _logsumexp(m + f_new[:, None] / reg, axis=0))
        shift = max(np.abs(f_new - f).max(), np.abs(g_new - g).max())
        f, g = f_new, g_new
        if shift < tol:
            break
    p = np.exp(m + f[:, None] / reg + g[None, :] / reg)
    p = _round_to_feasible(p, a, b)
    plan = {}
    total = 0.0
    for i, x in enumerate(src):
        for j, y in enumerate(tgt):
            if p[i, j] > 0.0:
                plan[(x, y)] = float(p[i, j])
                total += p[i, j] * cost[i, j]
    bias = reg * math.log(max(len(src) * len(tgt), 2))
    tp = TransportPlan(mu, nu, plan, float(total), exact=False, bias_bound=bias)
    return float(total), tp


def _logsumexp(m: np.ndarray, axis: int) -> np.ndarray:
    peak = m.max(axis=axis, keepdims=True)
    out = peak + np.log(np.exp(m - peak).sum(axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def _round_to_feasible(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Round an almost-coupling to exact marginals (scale rows/cols, then patch)."""
    row = p.sum(axis=1)
    p = p * np.minimum(1.0, a / np.where(row > 0, row, 1.0))[:, None]
    col = p.sum(axis=0)
    p = p * np.minimum(1.0, b / np.where(col > 0, col, 1.0))[None, :]
    da = a - p.sum(axis=1)
    db = b - p.sum(axis=0)
    total = da.sum()
    if total > 0:
        p = p + np.outer(da, db) / total
    return p


# -----------------------------------------------------------------------------
# Coupling bounds
# -----------------------------------------------------------------------------
def product_coupling_bound(lam: DiscreteMeasure, mu: DiscreteMeasure,
                           nu: DiscreteMeasure, alpha: float) -> float:
    """Upper bound on the distance from a two-block coupling to a product.

    ``lam`` lives on A^n split into a K-block of the first k coordinates and an
    L-block of the rest; ``mu`` and ``nu`` live on the blocks.  ``alpha`` must
    equal k/n so that the blockwise metric combination is the normalized
    Hamming metric on A^n.  Returns

        alpha * dbar(lam_K, mu) + (1-alpha) * E_{x~lam_K} dbar(lam_{L|x}, nu).
    """
    n = lam.space.dimension
    k = mu.space.dimension
    if nu.space.dimension != n - k or not (0 < k < n):
        raise MeasureError("invalid split")
    if abs(alpha - k / n) > 1e-12:
        raise MeasureError(f"invalid split: alpha must be {k}/{n}")
    lam_k = marginal(lam, range(k))
    cost_k, _ = transport_distance(lam_k, mu)
    expected = 0.0
    for x in lam_k.support:
        block = condition(lam, [w for w in lam.support if w[:k] == x])
        cond = marginal(block, range(k, n))
        cost_l, _ = transport_distance(cond, nu)
        expected += lam_k.mass(x) * cost_l
    return alpha * cost_k + (1.0 - alpha) * expected


def tv_partition_bound(mu: DiscreteMeasure, nu: DiscreteMeasure,
                       blocks: Sequence[Iterable[Word]]) -> float:
    """Partition upper bound on dbar(nu, mu): mass-weighted block diameters plus
    half the blockwise mass discrepancy times the ambient diameter (= 1)."""
    total = 0.0
    disc = 0.0
    for block in blocks:
        words = [tuple(w) for w in block]
        bm = sum(mu.mass(w) for w in words)
        bn = sum(nu.mass(w) for w in words)
        total += bm * diameter(words)
        disc += abs(bn - bm)
    return total + 0.5 * disc
