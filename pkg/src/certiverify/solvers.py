"""Exact desk-scale solvers: Euclidean TSP by bitmask dynamic programming and
Steiner tree by terminal-subset dynamic programming.

Both carry hard size caps; exactness is the point, not scale.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .dataset import Dataset, Graph

TSP_MAX_POINTS = 14
STEINER_MAX_TERMINALS = 10
STEINER_MAX_VERTICES = 16

_REL_TOL = 1e-9


def euclidean_matrix(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def _path_back_table(dist: np.ndarray, n: int) -> list[list[float]]:
    """g[mask][v]: cheapest path from v through exactly the vertices in mask
    (bits are vertices 1..n-1) and back to vertex 0."""
    size = 1 << (n - 1)
    g = [[0.0] * n for _ in range(size)]
    for v in range(n):
        g[0][v] = dist[v][0]
    for mask in range(1, size):
        gm = g[mask]
        for v in range(n):
            if v and (mask >> (v - 1)) & 1:
                continue
            best = math.inf
            mm = mask
            dv = dist[v]
            while mm:
                low = mm & -mm
                u = low.bit_length()  # bit k is vertex k+1
                cand = dv[u] + g[mask ^ low][u]
                if cand < best:
                    best = cand
                mm ^= low
            gm[v] = best
    return g


def tsp_solve(points) -> tuple[tuple[int, ...], float]:
    """Optimal closed tour over 3..14 Euclidean points.

    Returns (tour, length) with the tour reported as point indices starting at
    0; among optimal tours the lexicographically smallest index sequence is
    chosen.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n < 3:
        raise ValueError(f"tour undefined for n={n} points (need at least 3)")
    if n > TSP_MAX_POINTS:
        raise ValueError(f"n={n} exceeds the exact-DP cap of {TSP_MAX_POINTS} points")
    dist = euclidean_matrix(pts).tolist()
    g = _path_back_table(dist, n)
    full = (1 << (n - 1)) - 1
    opt = g[full][0]
    tol = _REL_TOL * max(1.0, abs(opt))

    tour = [0]
    mask = full
    last = 0
    spent = 0.0
    while mask:
        mm = mask
        while mm:
            low = mm & -mm
            u = low.bit_length()
            if spent + dist[last][u] + g[mask ^ low][u] <= opt + tol:
                tour.append(u)
                spent += dist[last][u]
                last = u
                mask ^= low
                break
            mm ^= low
        else:  # numeric slack exhausted; fall back to the cheapest continuation
            best_u, best_cost = -1, math.inf
            mm = mask
            while mm:
                low = mm & -mm
                u = low.bit_length()
                cand = spent + dist[last][u] + g[mask ^ low][u]
                if cand < best_cost:
                    best_cost, best_u = cand, u
                mm ^= low
            tour.append(best_u)
            spent += dist[last][best_u]
            last = best_u
            mask ^= 1 << (best_u - 1)
    return tuple(tour), opt


def tour_length(points, tour) -> float:
    pts = np.asarray(points, dtype=float)
    return math.fsum(
        float(np.linalg.norm(pts[tour[i]] - pts[tour[(i + 1) % len(tour)]]))
        for i in range(len(tour))
    )


def tsp_subset_values(points) -> dict[int, float]:
    """Closed-walk value for every subset of points, keyed by index bitmask.

    Subsets of size 0 or 1 cost 0, pairs cost twice their distance, and larger
    subsets get their exact optimal tour. One anchored DP per smallest member
    keeps the total work near a single full-size solve.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n > TSP_MAX_POINTS:
        raise ValueError(f"n={n} exceeds the exact-DP cap of {TSP_MAX_POINTS} points")
    dist = euclidean_matrix(pts).tolist()
    values: dict[int, float] = {0: 0.0}
    for v in range(n):
        values[1 << v] = 0.0
    for a in range(n):
        rest = list(range(a + 1, n))
        r = len(rest)
        if r == 0:
            continue
        # h[mask][v]: cheapest path a -> (exactly mask) ending at rest[v]
        h = [dict() for _ in range(1 << r)]
        for vi, v in enumerate(rest):
            h[1 << vi][vi] = dist[a][v]
        for mask in range(1, 1 << r):
            hm = h[mask]
            if not hm:
                continue
            full_value = math.inf
            for vi, cost in hm.items():
                v = rest[vi]
                back = cost + dist[v][a]
                if back < full_value:
                    full_value = back
                mm = ((1 << r) - 1) ^ mask
                while mm:
                    low = mm & -mm
                    ui = low.bit_length() - 1
                    cand = cost + dist[v][rest[ui]]
                    nxt = h[mask | low]
                    if cand < nxt.get(ui, math.inf):
                        nxt[ui] = cand
                    mm ^= low
            full_mask = 1 << a
            mm = mask
            while mm:
                low = mm & -mm
                full_mask |= 1 << (a + low.bit_length())
                mm ^= low
            values[full_mask] = full_value
    return values


def tsp_value_fn(dataset: Dataset):
    """Total subset objective for a points dataset: optimal tour length, with
    the closed-walk convention (0 for <=1 point, out-and-back for 2)."""
    table = tsp_subset_values(dataset.points)
    pos = {rid: i for i, rid in enumerate(dataset.ids)}

    def value(sub: Dataset) -> float:
        mask = 0
        for rid in sub.ids:
            mask |= 1 << pos[rid]
        return table[mask]

    return value


# ---------------------------------------------------------------------------
# Steiner trees


def _shortest_paths_with_next(graph: Graph) -> tuple[list[list[float]], list[list[int]]]:
    n = graph.n
    w = [[math.inf] * n for _ in range(n)]
    nxt = [[-1] * n for _ in range(n)]
    for i in range(n):
        w[i][i] = 0.0
        nxt[i][i] = i
    for u, v, wt in graph.edges:
        if wt < w[u][v]:
            w[u][v] = w[v][u] = wt
            nxt[u][v] = v
            nxt[v][u] = u
    for k in range(n):
        wk = w[k]
        for i in range(n):
            wik = w[i][k]
            if wik == math.inf:
                continue
            wi = w[i]
            for j in range(n):
                cand = wik + wk[j]
                if cand < wi[j]:
                    wi[j] = cand
                    nxt[i][j] = nxt[i][k]
    return w, nxt


def _expand_path(u: int, v: int, nxt) -> list[tuple[int, int]]:
    hops = []
    while u != v:
        step = nxt[u][v]
        hops.append((u, step))
        u = step
    return hops


def steiner_solve(graph: Graph, terminal_ids) -> tuple[tuple[tuple[int, int, float], ...], float]:
    """Minimum-cost tree connecting the given terminal vertices.

    Returns (edges, cost); edges are graph edges (u, v, weight) with u < v.
    Duplicated terminals collapse; a single terminal yields the empty tree.
    """
    terms = sorted(set(int(t) for t in terminal_ids))
    if graph.n > STEINER_MAX_VERTICES:
        raise ValueError(f"graph has {graph.n} vertices, cap is {STEINER_MAX_VERTICES}")
    if len(terms) > STEINER_MAX_TERMINALS:
        raise ValueError(f"{len(terms)} terminals exceed the cap of {STEINER_MAX_TERMINALS}")
    for t in terms:
        if not 0 <= t < graph.n:
            raise ValueError(f"terminal vertex {t} outside graph")
    if len(terms) <= 1:
        return (), 0.0
    dist, nxt = _shortest_paths_with_next(graph)
    for a, b in itertools.combinations(terms, 2):
        if not math.isfinite(dist[a][b]):
            raise ValueError(f"terminals {a} and {b} are disconnected")

    t = len(terms)
    n = graph.n
    root = terms[0]
    others = terms[1:]
    size = 1 << (t - 1)
    INF = math.inf
    cost = [[INF] * n for _ in range(size)]
    parent: dict[tuple[int, int], tuple] = {}
    for i, term in enumerate(others):
        mask = 1 << i
        for v in range(n):
            cost[mask][v] = dist[term][v]
            parent[(mask, v)] = ("leaf", term)
    for mask in range(1, size):
        cm = cost[mask]
        # merge two subtrees at a shared vertex
        sub = (mask - 1) & mask
        while sub:
            other = mask ^ sub
            if sub < other:  # each split once
                cs, co = cost[sub], cost[other]
                for v in range(n):
                    cand = cs[v] + co[v]
                    if cand < cm[v]:
                        cm[v] = cand
                        parent[(mask, v)] = ("split", sub, other, v)
            sub = (sub - 1) & mask
        # relax through the metric closure
        order = sorted(range(n), key=lambda v: cm[v])
        for u in order:
            cu = cm[u]
            if cu == INF:
                continue
            du = dist[u]
            for v in range(n):
                cand = cu + du[v]
                if cand < cm[v]:
                    cm[v] = cand
                    parent[(mask, v)] = ("walk", u)
    full = size - 1
    total = cost[full][root]

    # reconstruct the union of chosen paths, then prune to a tree
    edge_set: set[tuple[int, int]] = set()
    stack = [(full, root)]
    while stack:
        mask, v = stack.pop()
        entry = parent.get((mask, v))
        if entry is None:
            continue
        kind = entry[0]
        if kind == "leaf":
            edge_set.update(_norm(e) for e in _expand_path(entry[1], v, nxt))
        elif kind == "split":
            _, sub, other, at = entry
            stack.append((sub, at))
            stack.append((other, at))
        elif kind == "walk":
            u = entry[1]
            edge_set.update(_norm(e) for e in _expand_path(u, v, nxt))
            stack.append((mask, u))
    weight = {}
    for u, v, wt in graph.edges:
        key = (min(u, v), max(u, v))
        if key not in weight or wt < weight[key]:
            weight[key] = wt
    tree = _spanning_tree_prune(edge_set, weight, set(terms))
    return tuple((u, v, weight[(u, v)]) for u, v in tree), total


def _norm(edge: tuple[int, int]) -> tuple[int, int]:
    u, v = edge
    return (u, v) if u < v else (v, u)


def _spanning_tree_prune(edges: set[tuple[int, int]], weight, terminals: set[int]):
    """Minimum spanning tree of the reconstructed subgraph, then drop dangling
    non-terminal leaves."""
    vertices = {u for e in edges for u in e}
    parent = {v: v for v in vertices}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    chosen = []
    for u, v in sorted(edges, key=lambda e: (weight[e], e)):
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[ru] = rv
            chosen.append((u, v))
    adj: dict[int, set[int]] = {v: set() for v in vertices}
    for u, v in chosen:
        adj[u].add(v)
        adj[v].add(u)
    leaves = [v for v in vertices if len(adj[v]) == 1 and v not in terminals]
    chosen_set = set(chosen)
    while leaves:
        leaf = leaves.pop()
        if len(adj[leaf]) != 1:
            continue
        (nb,) = adj[leaf]
        adj[leaf].clear()
        adj[nb].discard(leaf)
        chosen_set.discard(_norm((leaf, nb)))
        if len(adj[nb]) == 1 and nb not in terminals:
            leaves.append(nb)
    return sorted(chosen_set)


def steiner_value_fn(dataset: Dataset):
    """Total subset objective for a terminals dataset: Steiner tree cost of the
    surviving terminal set (empty and singleton sets cost 0)."""
    graph = dataset.graph
    cache: dict[frozenset[int], float] = {}

    def value(sub: Dataset) -> float:
        verts = frozenset(rec.payload for rec in sub.records)
        if verts not in cache:
            cache[verts] = steiner_solve(graph, sorted(verts))[1]
        return cache[verts]

    return value
