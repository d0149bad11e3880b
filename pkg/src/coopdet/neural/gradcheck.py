"""Central finite-difference checks for analytic gradients (64-bit only)."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7, atol: float = 1e-8) -> float:
    """Worst |a - n| / (|a| + |n|).

    Differences below ``atol`` count as agreement: where the true gradient is
    exactly zero (a bias feeding batchnorm, say) central differences return
    pure roundoff of order eps_machine * loss / step.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if not a.size:
        return 0.0
    diff = np.maximum(np.abs(a - n) - atol, 0.0)
    return float(np.max(diff / np.maximum(np.abs(a) + np.abs(n), floor)))


def numeric_grad(loss: Callable[[], float], arr: np.ndarray, indices, eps: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss()`` w.r.t. ``arr`` (perturbed in place) at ``indices``."""
    out = np.empty(len(indices))
    for j, idx in enumerate(indices):
        old = arr[idx]
        arr[idx] = old + eps
        plus = loss()
        arr[idx] = old - eps
        minus = loss()
        arr[idx] = old
        out[j] = (plus - minus) / (2 * eps)
    return out


def grad_check(
    loss_and_grads: Callable[[], tuple[float, Mapping[str, np.ndarray]]],
    arrays: Mapping[str, np.ndarray],
    eps: float = 1e-5,
    max_per_array: int | None = None,
    seed: int = 0,
) -> float:
    """Maximum relative error between analytic and numeric gradients.

    ``loss_and_grads`` must recompute from the current contents of ``arrays``
    and return the loss together with analytic gradients keyed like ``arrays``.
    With ``max_per_array`` only a seeded random subset of entries is checked.
    """
    for name, arr in arrays.items():
        if arr.dtype != np.float64:
            raise TypeError(f"gradient checks need float64 arrays, {name} is {arr.dtype}")
    _, grads = loss_and_grads()
    grads = {k: np.array(v, copy=True) for k, v in grads.items()}
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, arr in arrays.items():
        all_idx = list(np.ndindex(arr.shape))
        if max_per_array is not None and len(all_idx) > max_per_array:
            pick = rng.choice(len(all_idx), size=max_per_array, replace=False)
            all_idx = [all_idx[i] for i in sorted(pick)]
        num = numeric_grad(lambda: loss_and_grads()[0], arr, all_idx, eps)
        ana = np.array([grads[name][i] for i in all_idx])
        worst = max(worst, rel_error(ana, num))
    return worst
