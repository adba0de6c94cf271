"""Exact event-driven simulation of the bricklayers' process on ``[-L, L]``.

Bond ``b = 0 .. N`` (``N = 2L + 1``) joins sites ``b - L - 1`` and
``b - L``; bonds ``0`` and ``N`` reach outside the lattice.  A brick on a
bond moves one unit of slope from its left site to its right site and raises
that bond's column height by one, so
``omega_i(t) - omega_i(0) = dh(bond left of i) - dh(bond right of i)``.

Boundary bonds are inert in ``frozen`` mode.  In ``reservoir`` mode the
outside neighbour is a fresh equilibrium draw at every evaluation, which makes
its contribution to the bond rate the mean ``E r(omega) = e^theta``.

Whether the finite box matters is tracked with two fronts: the edge sites
start out "influenced", and any brick on a bond with one influenced end
influences the other.  Sites outside the fronts evolve exactly as they would
on the infinite lattice driven by the same clocks.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from scipy.stats import norm

from .errors import OmegaCapError
from .kernel import DEFAULT_TAIL_TOL, ParameterProfile, RateFunction, SiteMeasure, build_measure, mean_u
from .ratetree import tree_build, tree_find, tree_update

__all__ = [
    "Configuration",
    "SimParams",
    "EventLog",
    "RunResult",
    "ProfileEstimate",
    "BoundaryWarning",
    "sample_site",
    "sample_initial",
    "bond_rate",
    "run",
    "estimate_profile",
    "default_omega_cap",
    "profile_zscores",
    "bonferroni_threshold",
]

NO_SITE = np.iinfo(np.int64).min
WARN_MARGIN = 5
MIN_REPLICAS = 100


class BoundaryWarning(UserWarning):
    """The finite-box influence came close to the measurement window."""


@dataclass
class Configuration:
    """Slopes on ``[-L, L]`` and brick counts on the ``2L + 2`` bonds."""

    omega: np.ndarray
    heights: np.ndarray
    time: float = 0.0
    event_count: int = 0

    def __post_init__(self) -> None:
        self.omega = np.asarray(self.omega, dtype=np.int64)
        self.heights = np.asarray(self.heights, dtype=np.int64)
        if self.omega.size % 2 != 1 or self.heights.size != self.omega.size + 1:
            raise ValueError("need 2L+1 sites and 2L+2 bonds")

    @property
    def L(self) -> int:
        return self.omega.size // 2

    @property
    def sites(self) -> np.ndarray:
        return np.arange(-self.L, self.L + 1)

    def omega_at(self, i: int) -> int:
        return int(self.omega[i + self.L])

    def copy(self) -> Configuration:
        return Configuration(self.omega.copy(), self.heights.copy(), self.time, self.event_count)

    def consistent_with(self, initial: Configuration) -> bool:
        """Height/slope identity and brick count against the starting state."""
        dh = self.heights - initial.heights
        ok_slopes = np.array_equal(self.omega - initial.omega, dh[:-1] - dh[1:])
        return bool(ok_slopes and int(dh.sum()) == self.event_count - initial.event_count)


@dataclass(frozen=True)
class SimParams:
    L: int
    t_end: float
    seed: int = 0
    boundary: str = "frozen"
    replicas: int = 100
    window: tuple[int, int] | None = None
    omega_cap: int | None = None
    record_events: bool = False
    check_every: int = 0

    def __post_init__(self) -> None:
        if self.L < 1:
            raise ValueError("L must be positive")
        if self.boundary not in ("frozen", "reservoir"):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if not self.t_end >= 0:
            raise ValueError("t_end must be nonnegative")
        if self.replicas < 1:
            raise ValueError("need at least one replica")
        lo, hi = self.measurement_window
        if not -self.L < lo <= hi < self.L:
            raise ValueError(f"window {self.window} must lie strictly inside [-{self.L}, {self.L}]")
        if self.omega_cap is not None and self.omega_cap < 1:
            raise ValueError("omega_cap must be positive")

    @property
    def measurement_window(self) -> tuple[int, int]:
        if self.window is None:
            return -self.L + 1, self.L - 1
        return int(self.window[0]), int(self.window[1])

    def to_dict(self) -> dict:
        out = asdict(self)
        out["window"] = list(self.measurement_window)
        return out


def default_omega_cap(profile: ParameterProfile, rf: RateFunction, L: int) -> int:
    """``40 / beta`` above the largest ``|u(theta_i)|`` on the lattice."""
    extreme = max(abs(mean_u(build_measure(rf, th))) for th in set(profile.thetas(range(-L - 1, L + 2))))
    scale = rf.beta if rf.is_exponential else 1.0
    return int(math.ceil(extreme + 40.0 / scale))


def sample_site(m: SiteMeasure, rng: np.random.Generator, size: int | None = None):
    """Inverse-CDF draw(s) from the truncated site measure."""
    cdf = m.cdf()
    u = rng.random(size) * cdf[-1]
    idx = np.searchsorted(cdf, u, side="right")
    idx = np.minimum(idx, len(cdf) - 1)
    out = m.z_lo + idx
    return int(out) if size is None else out.astype(np.int64)


def sample_initial(
    profile: ParameterProfile,
    rf: RateFunction,
    params: SimParams,
    rng: np.random.Generator,
    tail_tol: float = DEFAULT_TAIL_TOL,
) -> Configuration:
    """Independent draws from ``mu^(theta_i)`` on every site; heights zero."""
    L = params.L
    thetas = profile.thetas(range(-L, L + 1))
    u = rng.random(thetas.size)
    omega = np.empty(thetas.size, dtype=np.int64)
    for th in np.unique(thetas):
        m = build_measure(rf, float(th), tail_tol)
        cdf = m.cdf()
        sel = thetas == th
        idx = np.minimum(np.searchsorted(cdf, u[sel] * cdf[-1], side="right"), len(cdf) - 1)
        omega[sel] = m.z_lo + idx
    return Configuration(omega, np.zeros(thetas.size + 1, dtype=np.int64))


def _rate_table(rf: RateFunction, cap: int) -> np.ndarray:
    z = np.arange(-cap - 1, cap + 2)
    return rf.rates(z)


def bond_rate(c: Configuration, i: int, rf: RateFunction, omega_cap: int | None = None) -> float:
    """``r(omega_i) + r(-omega_{i+1})`` for the interior bond ``(i, i+1)``."""
    if not -c.L <= i < c.L:
        raise ValueError(f"bond ({i}, {i + 1}) is not inside the lattice")
    a, b = c.omega_at(i), c.omega_at(i + 1)
    if omega_cap is not None and max(abs(a), abs(b)) > omega_cap:
        raise OmegaCapError(f"slope {max(abs(a), abs(b))} beyond cap {omega_cap} at bond {i}")
    return float(rf.rates(np.array([a]))[0] + rf.rates(np.array([-b]))[0])


@njit(cache=True)
def _bond_rate(b, omega, n, tab, off, reservoir, res_left, res_right):
    if b == 0:
        return res_left + tab[off - omega[0]] if reservoir else 0.0
    if b == n:
        return tab[off + omega[n - 1]] + res_right if reservoir else 0.0
    return tab[off + omega[b - 1]] + tab[off - omega[b]]


@njit(cache=True)
def _gillespie(
    omega, heights, tab, cap, reservoir, res_left, res_right, t_start, t_end, seed,
    log_t, log_b, log_l, log_r, check_every,
):
    np.random.seed(seed)
    n = omega.shape[0]
    nb = n + 1
    off = cap + 1
    size = 1
    while size < nb:
        size *= 2
    rates = np.zeros(nb)
    for b in range(nb):
        rates[b] = _bond_rate(b, omega, n, tab, off, reservoir, res_left, res_right)
    tree = tree_build(rates, size)
    cap_log = log_t.shape[0]
    t = t_start
    events = 0
    breach = -1
    max_err = 0.0
    front_l = 0
    front_r = n - 1
    while True:
        total = tree[1]
        if total <= 0.0:
            t = t_end
            break
        t += np.random.exponential(1.0 / total)
        if t > t_end:
            t = t_end
            break
        b = tree_find(tree, size, np.random.random() * total)
        if b >= 1:
            omega[b - 1] -= 1
        if b <= n - 1:
            omega[b] += 1
        heights[b] += 1
        if events < cap_log:
            log_t[events] = t
            log_b[events] = b
            log_l[events] = omega[b - 1] if b >= 1 else -9223372036854775807 - 1
            log_r[events] = omega[b] if b <= n - 1 else -9223372036854775807 - 1
        events += 1
        if b >= 1 and abs(omega[b - 1]) > cap:
            breach = b - 1
            break
        if b <= n - 1 and abs(omega[b]) > cap:
            breach = b
            break
        lo = b - 1 if b >= 1 else 0
        hi = b + 1 if b + 1 <= n else n
        for bb in range(lo, hi + 1):
            tree_update(tree, size, bb, _bond_rate(bb, omega, n, tab, off, reservoir, res_left, res_right))
        if b >= 1 and b - 1 <= front_l and b > front_l:
            front_l = b
        if b <= n - 1 and b >= front_r and b - 1 < front_r:
            front_r = b - 1
        if check_every > 0 and events % check_every == 0:
            direct = 0.0
            for bb in range(nb):
                direct += tree[size + bb]
            err = abs(tree[1] - direct) / direct
            if err > max_err:
                max_err = err
    return t, events, breach, max_err, front_l, front_r


@dataclass(frozen=True, eq=False)
class EventLog:
    """Bricks in time order: bond label is the left site of the bond."""

    t: np.ndarray
    bond: np.ndarray
    omega_left_after: np.ndarray
    omega_right_after: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    def write_csv(self, path: str | Path) -> None:
        def cell(v):
            return "" if v == NO_SITE else str(int(v))

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "bond", "omega_left_after", "omega_right_after"])
            for row in zip(self.t, self.bond, self.omega_left_after, self.omega_right_after):
                w.writerow([repr(float(row[0])), int(row[1]), cell(row[2]), cell(row[3])])


@dataclass
class RunResult:
    config: Configuration
    events: EventLog | None
    influenced: tuple[int, int]  # innermost influenced sites from the left and right edges
    resync_error: float
    boundary_warning: bool


def _reservoir_rates(profile: ParameterProfile, L: int) -> tuple[float, float]:
    return math.exp(profile.theta(-L - 1)), math.exp(-profile.theta(L + 1))


def run(
    c: Configuration,
    profile: ParameterProfile,
    rf: RateFunction,
    params: SimParams,
    rng: np.random.Generator | int,
    omega_cap: int | None = None,
) -> RunResult:
    """Simulate from ``c`` until ``params.t_end``; ``c`` is not modified.

    ``rng`` may be a Generator (one 63-bit seed is drawn from it) or the seed
    itself.  Raises :class:`OmegaCapError` when a slope leaves the cap.
    """
    if c.L != params.L:
        raise ValueError(f"configuration has L={c.L}, params say L={params.L}")
    seed = int(rng.integers(2**63)) if isinstance(rng, np.random.Generator) else int(rng)
    cap = omega_cap or params.omega_cap or default_omega_cap(profile, rf, params.L)
    if np.abs(c.omega).max() > cap:
        raise OmegaCapError(f"initial slope {np.abs(c.omega).max()} beyond cap {cap}")
    tab = _rate_table(rf, cap)
    reservoir = params.boundary == "reservoir"
    res_l, res_r = _reservoir_rates(profile, params.L) if reservoir else (0.0, 0.0)

    capacity = 1024 if params.record_events else 0
    while True:
        out = c.copy()
        logs = [np.empty(capacity), *(np.empty(capacity, dtype=np.int64) for _ in range(3))]
        t, events, breach, err, fl, fr = _gillespie(
            out.omega, out.heights, tab, cap, reservoir, res_l, res_r,
            float(c.time), float(params.t_end), seed, *logs, params.check_every,
        )
        if events <= capacity or not params.record_events:
            break
        capacity = events + 1024  # same seed, so the rerun reproduces the path

    if breach >= 0:
        raise OmegaCapError(
            f"slope at site {breach - params.L} reached {out.omega[breach]} beyond cap {cap} "
            f"at t={t:.6g} after {events} events"
        )
    out.time = t
    out.event_count = c.event_count + events
    log = None
    if params.record_events:
        log = EventLog(logs[0][:events], logs[1][:events] - params.L - 1, logs[2][:events], logs[3][:events])
    influenced = (fl - params.L, fr - params.L)
    lo, hi = params.measurement_window
    warn = influenced[0] >= lo - WARN_MARGIN or influenced[1] <= hi + WARN_MARGIN
    return RunResult(out, log, influenced, err, warn)


# ---------------------------------------------------------------------------
# Estimators


@dataclass
class ProfileEstimate:
    """Integer moment sums over replicas; merging is exact and order-free."""

    sites: np.ndarray
    t: float
    count: int = 0
    sum_omega: np.ndarray = field(default=None)
    sumsq_omega: np.ndarray = field(default=None)
    sum_bricks: np.ndarray = field(default=None)  # bonds (i, i+1), i in sites[:-1]
    sum_window_bricks: int = 0
    sumsq_window_bricks: int = 0
    events: int = 0
    warnings: int = 0

    def __post_init__(self) -> None:
        k = len(self.sites)
        if self.sum_omega is None:
            self.sum_omega = np.zeros(k, dtype=np.int64)
            self.sumsq_omega = np.zeros(k, dtype=np.int64)
            self.sum_bricks = np.zeros(k - 1, dtype=np.int64)

    def add(self, initial: Configuration, final: Configuration, boundary_warning: bool) -> None:
        L = final.L
        w = final.omega[self.sites + L]
        bricks = (final.heights - initial.heights)[self.sites[:-1] + L + 1]
        total = int(bricks.sum())
        self.count += 1
        self.sum_omega += w
        self.sumsq_omega += w * w
        self.sum_bricks += bricks
        self.sum_window_bricks += total
        self.sumsq_window_bricks += total * total
        self.events += final.event_count - initial.event_count
        self.warnings += int(boundary_warning)

    def merge(self, other: ProfileEstimate) -> ProfileEstimate:
        if not np.array_equal(self.sites, other.sites) or self.t != other.t:
            raise ValueError("estimates cover different windows or times")
        return ProfileEstimate(
            self.sites, self.t, self.count + other.count,
            self.sum_omega + other.sum_omega, self.sumsq_omega + other.sumsq_omega,
            self.sum_bricks + other.sum_bricks,
            self.sum_window_bricks + other.sum_window_bricks,
            self.sumsq_window_bricks + other.sumsq_window_bricks,
            self.events + other.events, self.warnings + other.warnings,
        )

    @property
    def mean(self) -> np.ndarray:
        return self.sum_omega / self.count

    @property
    def stderr(self) -> np.ndarray:
        n = self.count
        var = (self.sumsq_omega - self.sum_omega.astype(float) ** 2 / n) / (n - 1)
        return np.sqrt(np.maximum(var, 0.0) / n)

    def deposition_rate(self) -> tuple[float, float]:
        """Bricks per bond per unit time over the window, with its standard error."""
        n, k = self.count, len(self.sites) - 1
        if self.t <= 0 or k == 0:
            raise ValueError("deposition rate needs t > 0 and at least one bond")
        mean = self.sum_window_bricks / n
        var = (self.sumsq_window_bricks - self.sum_window_bricks**2 / n) / (n - 1)
        scale = k * self.t
        return mean / scale, math.sqrt(max(var, 0.0) / n) / scale

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["site", "mean", "stderr"])
            for i, m, s in zip(self.sites, self.mean, self.stderr):
                w.writerow([int(i), repr(float(m)), repr(float(s))])


def estimate_profile(
    profile: ParameterProfile,
    rf: RateFunction,
    params: SimParams,
    tail_tol: float = DEFAULT_TAIL_TOL,
    first_replica: int = 0,
) -> ProfileEstimate:
    """Replica average of ``omega_i(t_end)`` over the measurement window.

    Replica ``k`` uses the ``k``-th child of ``SeedSequence(params.seed)`` for
    both its initial draw and its dynamics, so any subset of replicas can be
    recomputed (or run elsewhere) and merged.
    """
    if params.replicas < MIN_REPLICAS:
        raise ValueError(f"need at least {MIN_REPLICAS} replicas, got {params.replicas}")
    lo, hi = params.measurement_window
    est = ProfileEstimate(np.arange(lo, hi + 1), float(params.t_end))
    cap = params.omega_cap or default_omega_cap(profile, rf, params.L)
    children = np.random.SeedSequence(params.seed).spawn(first_replica + params.replicas)[first_replica:]
    for child in children:
        rng = np.random.default_rng(child)
        c0 = sample_initial(profile, rf, params, rng, tail_tol)
        res = run(c0, profile, rf, params, rng, omega_cap=cap)
        est.add(c0, res.config, res.boundary_warning)
    if est.warnings:
        warnings.warn(
            f"{est.warnings} of {est.count} replicas had boundary influence within "
            f"{WARN_MARGIN} sites of the window",
            BoundaryWarning,
            stacklevel=2,
        )
    return est


def bonferroni_threshold(k: int, sigma: float = 4.0) -> float:
    """Per-site |z| threshold keeping the family-wise level of a two-sided ``sigma`` test."""
    alpha = 2.0 * norm.sf(sigma)
    return float(norm.isf(alpha / (2.0 * k)))


def profile_zscores(est: ProfileEstimate, predicted: np.ndarray) -> np.ndarray:
    se = est.stderr
    diff = est.mean - np.asarray(predicted, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / se, np.where(diff == 0, 0.0, np.inf))
    return z
