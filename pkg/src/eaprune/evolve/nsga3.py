"""Nondominated sorting and NSGA-III reference-point survivor selection (minimisation)."""

from __future__ import annotations

from math import comb

import numpy as np

INTERCEPT_EPS = 1e-12


def dominates(a, b) -> bool:
    """True when ``a`` is no worse than ``b`` everywhere and better somewhere."""
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def fast_nondominated_sort(objs) -> list:
    """Deb's fast nondominated sort; returns fronts as lists of indices."""
    f = np.asarray(objs, dtype=np.float64)
    if f.ndim != 2 or len(f) == 0:
        raise ValueError("need a non-empty [n x m] objective array")
    n = len(f)
    le = np.all(f[:, None, :] <= f[None, :, :], axis=2)
    lt = np.any(f[:, None, :] < f[None, :, :], axis=2)
    dom = le & lt                      # dom[i, j]: i dominates j
    counts = dom.sum(axis=0)           # how many dominate j
    fronts = []
    current = [int(i) for i in np.flatnonzero(counts == 0)]
    remaining = counts.copy()
    while current:
        fronts.append(current)
        nxt = []
        for i in current:
            for j in np.flatnonzero(dom[i]):
                remaining[j] -= 1
                if remaining[j] == 0:
                    nxt.append(int(j))
        current = sorted(nxt)
    return fronts


def front_ranks(objs) -> np.ndarray:
    ranks = np.empty(len(objs), dtype=np.int64)
    for r, front in enumerate(fast_nondominated_sort(objs)):
        ranks[front] = r
    return ranks


def das_dennis(divisions: int, n_obj: int = 2) -> np.ndarray:
    """Uniform simplex lattice; C(p + M - 1, M - 1) points, rows summing to 1."""
    def rec(left, depth):
        if depth == n_obj - 1:
            yield (left,)
            return
        for i in range(left, -1, -1):
            for rest in rec(left - i, depth + 1):
                yield (i,) + rest

    pts = np.array(list(rec(divisions, 0)), dtype=np.float64) / divisions
    assert len(pts) == comb(divisions + n_obj - 1, n_obj - 1)
    return pts


def normalize(objs, ideal=None) -> np.ndarray:
    """Translate by the ideal point and scale by hyperplane intercepts.

    Extreme points come from the achievement scalarising function along each
    axis; when the hyperplane is degenerate the per-axis maxima are used.
    """
    f = np.asarray(objs, dtype=np.float64)
    m = f.shape[1]
    ideal = f.min(axis=0) if ideal is None else ideal
    t = f - ideal
    weights = np.full((m, m), 1e-6) + np.eye(m) * (1 - 1e-6)
    asf = np.max(t[:, None, :] / weights[None, :, :], axis=2)   # [n, m]
    extremes = t[np.argmin(asf, axis=0)]                       # [m, m]
    nadir = t.max(axis=0)
    try:
        plane = np.linalg.solve(extremes, np.ones(m))
        intercepts = 1.0 / plane
        if not np.all(np.isfinite(intercepts)) or np.any(intercepts <= INTERCEPT_EPS):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        intercepts = nadir
    intercepts = np.where(intercepts <= INTERCEPT_EPS, INTERCEPT_EPS, intercepts)
    return t / intercepts


def associate(normed, refs):
    """Nearest reference line (by perpendicular distance) for every point.

    Ties resolve to the lower reference index. Returns ``(ref_idx, dist)``.
    """
    refs = np.asarray(refs, dtype=np.float64)
    unit = refs / np.linalg.norm(refs, axis=1, keepdims=True)
    proj = normed @ unit.T                                        # [n, r]
    sq = np.sum(normed ** 2, axis=1, keepdims=True) - proj ** 2
    dist = np.sqrt(np.maximum(sq, 0.0))
    idx = np.argmin(dist, axis=1)
    return idx, dist[np.arange(len(normed)), idx]


def extreme_indices(objs) -> list:
    """Best individual per objective (ties broken lexicographically on the others)."""
    f = np.asarray(objs, dtype=np.float64)
    out = []
    for j in range(f.shape[1]):
        keys = [f[:, j]] + [f[:, k] for k in range(f.shape[1]) if k != j]
        order = np.lexsort(keys[::-1])
        out.append(int(order[0]))
    return list(dict.fromkeys(out))


def select(objs, n_select: int, refs, rng: np.random.Generator) -> list:
    """NSGA-III environmental selection of ``n_select`` indices from ``objs``.

    Whole fronts are taken while they fit; the first front that does not fit
    is split by reference-point niching. If that front is the first one, its
    per-objective extremes are kept before niching so the span of the front
    never shrinks.
    """
    f = np.asarray(objs, dtype=np.float64)
    n = len(f)
    if n_select >= n:
        return list(range(n))
    fronts = fast_nondominated_sort(f)
    chosen = []
    last = None
    for front in fronts:
        if len(chosen) + len(front) <= n_select:
            chosen.extend(front)
            if len(chosen) == n_select:
                return sorted(chosen)
        else:
            last = front
            break
    pool = chosen + last
    normed = normalize(f[pool])
    ref_idx, dist = associate(normed, refs)
    pos = {ind: k for k, ind in enumerate(pool)}
    niche = np.zeros(len(refs), dtype=np.int64)
    for ind in chosen:
        niche[ref_idx[pos[ind]]] += 1
    candidates = list(last)
    if not chosen:
        for e in extreme_indices(f[last]):
            ind = last[e]
            if len(chosen) < n_select:
                chosen.append(ind)
                niche[ref_idx[pos[ind]]] += 1
                candidates.remove(ind)
    while len(chosen) < n_select:
        by_ref = {}
        for ind in candidates:
            by_ref.setdefault(int(ref_idx[pos[ind]]), []).append(ind)
        usable = sorted(by_ref)
        counts = niche[usable]
        jmin = [j for j, c in zip(usable, counts) if c == counts.min()]
        j = jmin[int(rng.integers(len(jmin)))] if len(jmin) > 1 else jmin[0]
        members = by_ref[j]
        if niche[j] == 0:
            pick = min(members, key=lambda ind: (dist[pos[ind]], ind))
        else:
            pick = members[int(rng.integers(len(members)))]
        chosen.append(pick)
        candidates.remove(pick)
        niche[j] += 1
    return sorted(chosen)
