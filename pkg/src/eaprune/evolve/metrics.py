"""Front quality measures used by the ablation comparisons."""

import numpy as np


def hypervolume(points, reference) -> float:
    """Exact area dominated by 2-D ``points`` (minimisation) up to ``reference``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    ref = np.asarray(reference, dtype=np.float64)
    pts = pts[np.all(pts < ref, axis=1)]
    if len(pts) == 0:
        return 0.0
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    area = 0.0
    best_y = ref[1]
    for x, y in pts:
        if y < best_y:
            area += (ref[0] - x) * (best_y - y)
            best_y = y
    return float(area)


def attainment(front_flops, front_acc, budget) -> float:
    """Best accuracy reachable with FLOPs <= ``budget`` (NaN when none)."""
    f = np.asarray(front_flops, dtype=np.float64)
    a = np.asarray(front_acc, dtype=np.float64)
    ok = f <= budget
    return float(a[ok].max()) if ok.any() else float("nan")


def matched_deciles(a_flops, b_flops, bins=10) -> np.ndarray:
    """Centres of ``bins`` equal slices of the FLOPs range both fronts cover."""
    lo = max(np.min(a_flops), np.min(b_flops))
    hi = min(np.max(a_flops), np.max(b_flops))
    if hi < lo:
        return np.array([])
    return lo + (hi - lo) * (np.arange(bins) + 0.5) / bins


def compare_fronts(a, b, bins=10) -> dict:
    """Accuracy of two fronts at shared FLOPs budgets.

    ``a`` and ``b`` are ``(flops, accuracy)`` array pairs. Returns the budgets,
    both attainment curves, the absolute gaps and the fraction of budgets at
    which ``a`` is at least as accurate as ``b``.
    """
    budgets = matched_deciles(a[0], b[0], bins)
    acc_a = np.array([attainment(a[0], a[1], x) for x in budgets])
    acc_b = np.array([attainment(b[0], b[1], x) for x in budgets])
    gaps = np.abs(acc_a - acc_b)
    return {
        "budgets": budgets.tolist(),
        "accuracy_a": acc_a.tolist(),
        "accuracy_b": acc_b.tolist(),
        "mean_abs_gap": float(gaps.mean()) if len(gaps) else float("nan"),
        "a_weakly_dominates": (acc_a >= acc_b).tolist(),
        "a_dominance_fraction": float(np.mean(acc_a >= acc_b)) if len(gaps) else float("nan"),
    }
