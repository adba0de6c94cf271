"""Binary partial-sum tree for proportional event selection.

Leaves live at ``tree[size:size + n]`` and the root sum at ``tree[1]``.
Updates recompute the ancestors from their children instead of adding
differences, so floating-point drift cannot accumulate.
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = ["tree_size", "tree_build", "tree_update", "tree_find", "tree_total"]


def tree_size(n: int) -> int:
    size = 1
    while size < n:
        size *= 2
    return size


@njit(cache=True)
def tree_build(rates: np.ndarray, size: int) -> np.ndarray:
    tree = np.zeros(2 * size)
    for i in range(rates.shape[0]):
        tree[size + i] = rates[i]
    for j in range(size - 1, 0, -1):
        tree[j] = tree[2 * j] + tree[2 * j + 1]
    return tree


@njit(cache=True)
def tree_update(tree: np.ndarray, size: int, i: int, rate: float) -> None:
    j = size + i
    tree[j] = rate
    j //= 2
    while j >= 1:
        tree[j] = tree[2 * j] + tree[2 * j + 1]
        j //= 2


@njit(cache=True)
def tree_find(tree: np.ndarray, size: int, target: float) -> int:
    """Leaf index ``i`` with ``sum(leaves[:i]) <= target < sum(leaves[:i + 1])``."""
    j = 1
    while j < size:
        left = tree[2 * j]
        if target < left:
            j = 2 * j
        else:
            target -= left
            j = 2 * j + 1
    # Round-off can land on a zero-rate leaf at the right end; walk back.
    while tree[j] <= 0.0 and j > size:
        j -= 1
    return j - size


@njit(cache=True)
def tree_total(tree: np.ndarray) -> float:
    return tree[1]
