"""Interacting shock walkers on half-integer sites.

A configuration of ``n`` walkers with parameter ``theta_left`` encodes the
profile that starts at ``theta_left`` and drops by ``beta`` across every
walker.  A walker at ``p`` sits between sites ``p - 1/2`` and ``p + 1/2``.

If ``m`` walkers share a position and ``k`` walkers lie strictly to its
left, one of them steps right at rate ``e^{theta_L - k beta}(1 - e^{-m beta})``
and left at rate ``e^{-theta_L + k beta}(e^{m beta} - 1)``.  These rates are
the sums of the single-walker rates over the sorted labels
``l = k, ..., k + m - 1``, which the batch simulator exploits: sorted label
``l`` fires at a constant rate, and the top (bottom) walker of its group
moves right (left), so the order is never violated.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.linalg import expm
from scipy.sparse.linalg import expm_multiply
from scipy.stats import skellam

from .errors import ComplexityError, ProfileError
from .kernel import DEFAULT_TAIL_TOL, ParameterProfile, RateFunction, u_of_theta
from .ratetree import tree_build, tree_find, tree_size

__all__ = [
    "WalkerConfig",
    "site_rates",
    "label_rates",
    "total_rate",
    "total_rate_formula",
    "step",
    "Trajectory",
    "simulate",
    "center_of_mass",
    "width",
    "WalkerLaw",
    "master_equation",
    "GapBounds",
    "gap_bound_rates",
    "com_drift",
    "displacement_law",
    "simulate_batch",
    "single_shock_mean_profile",
    "gap_tail_ratio",
]

MAX_WALKERS_EXACT = 4
MAX_MASTER_STATES = 100_000


def _is_half_integer(p: float) -> bool:
    q = 2.0 * p
    return q == math.floor(q) and int(q) % 2 != 0


@dataclass(frozen=True)
class WalkerConfig:
    """Sorted multiset of walker positions in ``Z + 1/2``."""

    positions: tuple[float, ...]
    theta_left: float
    beta: float

    def __post_init__(self) -> None:
        pos = tuple(sorted(float(p) for p in self.positions))
        if not pos:
            raise ProfileError("need at least one walker")
        bad = [p for p in pos if not _is_half_integer(p)]
        if bad:
            raise ProfileError(f"positions must be half-integers, got {bad}")
        if not self.beta > 0:
            raise ProfileError("beta must be positive")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "theta_left", float(self.theta_left))
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def theta_right(self) -> float:
        return self.theta_left - self.n * self.beta

    @classmethod
    def from_profile(cls, profile: ParameterProfile) -> WalkerConfig:
        """Walkers for a non-increasing profile whose drops are multiples of ``beta``.

        Increasing steps would need negative rates and are rejected.
        """
        if profile.beta is None:
            raise ProfileError("profile needs beta to define walkers")
        if not profile.is_decreasing:
            raise ProfileError("increasing profile steps have no walker representation")
        if not profile.is_beta_quantized:
            raise ProfileError("profile drops must be integer multiples of beta")
        pos: list[float] = []
        prev = profile.theta_left
        for site, value in profile.breakpoints:
            pos.extend([site - 0.5] * round((prev - value) / profile.beta))
            prev = value
        return cls(tuple(pos), profile.theta_left, profile.beta)

    def profile(self) -> ParameterProfile:
        counts = Counter(self.positions)
        bps = []
        theta = self.theta_left
        for p in sorted(counts):
            theta -= counts[p] * self.beta
            bps.append((int(p + 0.5), theta))
        return ParameterProfile(self.theta_left, tuple(bps), self.beta)

    def groups(self) -> list[tuple[float, int, int]]:
        """``(position, m, k)`` for every occupied position, left to right."""
        out = []
        k = 0
        for p, grp in itertools.groupby(self.positions):
            m = len(list(grp))
            out.append((p, m, k))
            k += m
        return out

    def moved(self, position: float, step: int) -> WalkerConfig:
        """One walker at ``position`` moved by ``step`` (+1 or -1)."""
        pos = list(self.positions)
        j = pos.index(position)
        pos[j] = position + step
        return WalkerConfig(tuple(pos), self.theta_left, self.beta)


def _group_rates(theta_left: float, beta: float, m: int, k: int) -> tuple[float, float]:
    right = math.exp(theta_left - k * beta) * -math.expm1(-m * beta)
    left = math.exp(-theta_left + k * beta) * math.expm1(m * beta)
    return right, left


def site_rates(cfg: WalkerConfig, position: float) -> tuple[float, float]:
    """(right, left) rate with which one walker leaves ``position``."""
    for p, m, k in cfg.groups():
        if p == position:
            return _group_rates(cfg.theta_left, cfg.beta, m, k)
    raise ValueError(f"position {position} is not occupied")


def label_rates(theta_left: float, beta: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Single-walker rates of sorted labels ``l = 0..n-1`` (right, left)."""
    l = np.arange(n)
    right = np.exp(theta_left - l * beta) * -np.expm1(-beta)
    left = np.exp(-theta_left + l * beta) * np.expm1(beta)
    return right, left


def total_rate(cfg: WalkerConfig) -> float:
    return math.fsum(sum(_group_rates(cfg.theta_left, cfg.beta, m, k)) for _, m, k in cfg.groups())


def total_rate_formula(theta_left: float, theta_right: float) -> tuple[float, float]:
    """Aggregate (right, left) jump rates; independent of the configuration."""
    return math.exp(theta_left) - math.exp(theta_right), math.exp(-theta_right) - math.exp(-theta_left)


def com_drift(cfg: WalkerConfig) -> float:
    right, left = total_rate_formula(cfg.theta_left, cfg.theta_right)
    return (right - left) / cfg.n


def step(cfg: WalkerConfig, rng: np.random.Generator) -> tuple[WalkerConfig, float]:
    """One event and its exponential waiting time."""
    groups = cfg.groups()
    rates = np.array([_group_rates(cfg.theta_left, cfg.beta, m, k) for _, m, k in groups])
    per_pos = rates.sum(axis=1)
    size = tree_size(len(groups))
    tree = tree_build(per_pos, size)
    total = tree[1]
    dt = rng.exponential(1.0 / total)
    j = tree_find(tree, size, rng.random() * total)
    right, left = rates[j]
    direction = 1 if rng.random() * (right + left) < right else -1
    return cfg.moved(groups[j][0], direction), float(dt)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    positions: np.ndarray  # (len(times), n)

    def write_csv(self, path: str | Path) -> None:
        n = self.positions.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *[f"x{j + 1}" for j in range(n)]])
            for t, row in zip(self.times, self.positions):
                w.writerow([repr(float(t)), *[f"{p:g}" for p in row]])


def simulate(
    cfg: WalkerConfig,
    t_end: float,
    rng: np.random.Generator,
    sample_times: np.ndarray | None = None,
) -> Trajectory:
    """Path up to ``t_end``, recorded at every event or at ``sample_times``."""
    t = 0.0
    if sample_times is None:
        times, rows = [0.0], [cfg.positions]
        while True:
            nxt, dt = step(cfg, rng)
            t += dt
            if t > t_end:
                break
            cfg = nxt
            times.append(t)
            rows.append(cfg.positions)
        return Trajectory(np.array(times), np.array(rows, dtype=float))
    sample_times = np.sort(np.asarray(sample_times, dtype=float))
    rows = []
    j = 0
    while j < len(sample_times):
        nxt, dt = step(cfg, rng)
        while j < len(sample_times) and sample_times[j] < t + dt:
            rows.append(cfg.positions)
            j += 1
        t += dt
        cfg = nxt
    return Trajectory(sample_times, np.array(rows, dtype=float))


def center_of_mass(cfg: WalkerConfig) -> Fraction:
    return Fraction(sum(int(2 * p) for p in cfg.positions), 2 * cfg.n)


def width(cfg: WalkerConfig) -> float:
    return cfg.positions[-1] - cfg.positions[0]


# ---------------------------------------------------------------------------
# Exact law


@dataclass(frozen=True, eq=False)
class WalkerLaw:
    """Law of the walker multiset on ``[bounds[0], bounds[1]]``.

    ``leak`` is the integrated probability flux of steps blocked at the bounds.
    """

    cfg0: WalkerConfig
    t: float
    bounds: tuple[float, float]
    states: np.ndarray  # (N, n) sorted positions
    probs: np.ndarray
    leak: float

    def __len__(self) -> int:
        return len(self.probs)

    def config(self, j: int) -> WalkerConfig:
        return WalkerConfig(tuple(self.states[j]), self.cfg0.theta_left, self.cfg0.beta)

    def com_displacement_pmf(self) -> dict[int, float]:
        """Law of ``n X(t) - n X(0)`` (an integer)."""
        shift = np.rint(self.states.sum(axis=1) - sum(self.cfg0.positions)).astype(int)
        out: dict[int, float] = {}
        for s, p in zip(shift, self.probs):
            out[int(s)] = out.get(int(s), 0.0) + float(p)
        return out

    def mixture(self, min_prob: float = 0.0) -> list[tuple[float, ParameterProfile]]:
        return [(float(p), self.config(j).profile()) for j, p in enumerate(self.probs) if p > min_prob]

    def mean_profile(self, rf: RateFunction, sites: np.ndarray, tail_tol: float = DEFAULT_TAIL_TOL) -> np.ndarray:
        """``E omega_i`` under the mixture of shock measures."""
        n = self.cfg0.n
        u = np.array([u_of_theta(rf, self.cfg0.theta_left - j * self.cfg0.beta, tail_tol) for j in range(n + 1)])
        sites = np.asarray(sites)
        # number of walkers strictly left of site i = number with position < i
        below = (self.states[:, :, None] < sites[None, None, :]).sum(axis=1)
        return self.probs @ u[below]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["config_hash", "positions", "probability"])
            for row, p in zip(self.states, self.probs):
                key = " ".join(f"{x:g}" for x in row)
                digest = hashlib.blake2b(key.encode(), digest_size=8).hexdigest()
                w.writerow([digest, key, repr(float(p))])


def default_bounds(cfg: WalkerConfig, t: float) -> tuple[float, float]:
    """Window of ``6 sqrt(total_rate t) + width`` around the initial walkers."""
    pad = math.ceil(6.0 * math.sqrt(total_rate(cfg) * t) + width(cfg))
    return cfg.positions[0] - pad, cfg.positions[-1] + pad


def master_equation(
    cfg0: WalkerConfig,
    t: float,
    bounds: tuple[float, float] | None = None,
    max_states: int = MAX_MASTER_STATES,
) -> WalkerLaw:
    """Exact law at time ``t`` with steps across ``bounds`` suppressed.

    Blocked steps leave the state unchanged, so the law keeps unit mass;
    ``leak`` is the integrated rate of those blocked steps, an upper bound on
    the total-variation error against the unbounded walk.
    """
    if cfg0.n > MAX_WALKERS_EXACT:
        raise ComplexityError(f"master equation supports at most {MAX_WALKERS_EXACT} walkers")
    if bounds is None:
        bounds = default_bounds(cfg0, t)
    lo, hi = float(bounds[0]), float(bounds[1])
    if not (_is_half_integer(lo) and _is_half_integer(hi)) or lo > cfg0.positions[0] or hi < cfg0.positions[-1]:
        raise ValueError(f"bounds {bounds} must be half-integers enclosing the walkers")
    npos = int(hi - lo) + 1
    n = cfg0.n
    count = math.comb(npos + n - 1, n)
    if count > max_states:
        raise ComplexityError(f"{count} walker states exceed the guard {max_states}")

    states = np.array(list(itertools.combinations_with_replacement(range(npos), n)), dtype=np.int64)
    index = {tuple(s): j for j, s in enumerate(states)}
    rows, cols, vals = [], [], []
    leak = np.zeros(len(states))
    right_l, left_l = label_rates(cfg0.theta_left, cfg0.beta, n)
    for j, s in enumerate(states):
        k = 0
        while k < n:
            m = 1
            while k + m < n and s[k + m] == s[k]:
                m += 1
            r_rate = right_l[k : k + m].sum()
            l_rate = left_l[k : k + m].sum()
            for rate, d, top in ((r_rate, 1, k + m - 1), (l_rate, -1, k)):
                new = list(s)
                new[top] += d
                if 0 <= new[top] < npos:
                    rows.extend((index[tuple(new)], j))
                    cols.extend((j, j))
                    vals.extend((rate, -rate))
                else:
                    leak[j] += rate
            k += m
    big = len(states)
    rows.extend([big] * big)
    cols.extend(range(big))
    vals.extend(leak)
    gen = sp.csr_matrix((vals, (rows, cols)), shape=(big + 1, big + 1))
    p0 = np.zeros(big + 1)
    p0[index[tuple(int(p - lo) for p in cfg0.positions)]] = 1.0
    if t == 0:
        pt = p0
    elif big <= 400:
        pt = expm(gen.toarray() * float(t)) @ p0
    else:
        pt = expm_multiply(gen * float(t), p0)
    return WalkerLaw(cfg0, float(t), (lo, hi), states + lo, np.clip(pt[:-1], 0.0, None), float(pt[-1]))


def displacement_law(cfg: WalkerConfig, t: float):
    """Frozen Skellam law of ``n X(t) - n X(0)``."""
    right, left = total_rate_formula(cfg.theta_left, cfg.theta_right)
    return skellam(right * t, left * t)


def single_shock_mean_profile(
    cfg: WalkerConfig, rf: RateFunction, t: float, sites: np.ndarray, tail_tol: float = DEFAULT_TAIL_TOL
) -> np.ndarray:
    """``E omega_i(t)`` for one walker, whose displacement is Skellam distributed."""
    if cfg.n != 1:
        raise ValueError("closed form needs a single walker")
    sites = np.asarray(sites)
    u_l = u_of_theta(rf, cfg.theta_left, tail_tol)
    u_r = u_of_theta(rf, cfg.theta_right, tail_tol)
    # site i sees theta_left iff the walker is right of i, i.e. displacement > i - p0
    if t == 0:
        p_right = (sites < cfg.positions[0]).astype(float)
    else:
        p_right = displacement_law(cfg, t).sf(sites - cfg.positions[0])
    return u_r + (u_l - u_r) * p_right


# ---------------------------------------------------------------------------
# Gap bounds


@dataclass(frozen=True)
class GapBounds:
    min_decrease_rate: float
    max_increase_rate: float
    zero_gap: bool

    @property
    def ratio(self) -> float:
        return self.max_increase_rate / self.min_decrease_rate


def gap_bound_rates(cfg: WalkerConfig, m: int) -> GapBounds:
    """Rate bounds for the gap between sorted walkers ``m`` and ``m + 1`` (1-based).

    With ``S = e^{theta_L - beta m} + e^{-theta_L + beta m}`` the gap shrinks
    at rate at least ``e^beta (1 - e^{-beta}) S`` and grows at rate at most
    ``(1 - e^{-beta}) S``.  A zero gap can only grow; ``zero_gap`` flags it.
    """
    if not 1 <= m <= cfg.n - 1:
        raise ValueError(f"gap index must lie in [1, {cfg.n - 1}]")
    b, th = cfg.beta, cfg.theta_left
    s = math.exp(th - b * m) + math.exp(-th + b * m)
    zero = cfg.positions[m] == cfg.positions[m - 1]
    return GapBounds(math.exp(b) * -math.expm1(-b) * s, -math.expm1(-b) * s, zero)


def gap_tail_ratio(gaps: np.ndarray) -> float:
    """Geometric tail ratio fitted to the strictly positive gaps.

    Given ``gap >= 1``, ``gap - 1`` is geometric with ratio ``rho`` when the
    tail is, so ``rho = mean / (1 + mean)`` of the shifted sample.
    """
    pos = np.asarray(gaps)[np.asarray(gaps) >= 1] - 1
    if pos.size == 0:
        return 0.0
    mean = float(pos.mean())
    return mean / (1.0 + mean)


# ---------------------------------------------------------------------------
# Batch simulation


@njit(cache=True)
def _simulate_batch(x0, right, left, sample_times, seeds):
    n = x0.shape[0]
    reps = seeds.shape[0]
    ns = sample_times.shape[0]
    out = np.empty((reps, ns, n), dtype=np.int64)
    rates = np.empty(2 * n)
    rates[:n] = right
    rates[n:] = left
    size = 1
    while size < 2 * n:
        size *= 2
    tree = tree_build(rates, size)
    total = tree[1]
    for r in range(reps):
        np.random.seed(seeds[r])
        x = x0.copy()
        t = 0.0
        j = 0
        while j < ns:
            t_next = t + np.random.exponential(1.0 / total)
            while j < ns and sample_times[j] < t_next:
                out[r, j, :] = x
                j += 1
            if j == ns:
                break
            t = t_next
            leaf = tree_find(tree, size, np.random.random() * total)
            if leaf < n:
                top = leaf
                while top + 1 < n and x[top + 1] == x[leaf]:
                    top += 1
                x[top] += 1
            else:
                lab = leaf - n
                bot = lab
                while bot > 0 and x[bot - 1] == x[lab]:
                    bot -= 1
                x[bot] -= 1
    return out


def simulate_batch(
    cfg: WalkerConfig, sample_times: np.ndarray, seeds: np.ndarray
) -> np.ndarray:
    """Sorted positions of every replica at ``sample_times``: shape (reps, times, n).

    Replica ``r`` is driven by ``seeds[r]`` alone.
    """
    sample_times = np.asarray(sample_times, dtype=float)
    if np.any(np.diff(sample_times) < 0):
        raise ValueError("sample times must be sorted")
    right, left = label_rates(cfg.theta_left, cfg.beta, cfg.n)
    # positions p = x + 1/2 with integer x
    x0 = np.array([int(p - 0.5) for p in cfg.positions], dtype=np.int64)
    out = _simulate_batch(x0, right, left, sample_times, np.asarray(seeds, dtype=np.int64))
    return out + 0.5
