"""Rate functions, one-site measures and parameter profiles.

A bricklayer standing at site ``i`` lays a brick to its right with rate
``r(omega_i)`` and to its left with rate ``r(-omega_i)``.  The rate function
must satisfy ``r(z) * r(1 - z) == 1`` so that the one-parameter family

    mu_theta(z) = exp(theta * z) / r(z)! / Z(theta)

consists of stationary marginals.  Everything here is computed in the log
domain; the measures are truncated to a finite window whose excluded mass is
below ``tail_tol``.
"""

from __future__ import annotations

import bisect
import csv
import functools
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .errors import ConvergenceError, ProfileError, RateRangeError, ThetaRangeError

__all__ = [
    "DEFAULT_TAIL_TOL",
    "RateFunction",
    "SiteMeasure",
    "ParameterProfile",
    "rate_eval",
    "rate_factorial",
    "log_rate_factorial",
    "build_measure",
    "mean_u",
    "variance_u",
    "u_of_theta",
    "theta_of_u",
    "expected_rates",
    "shift_identity_residual",
]

DEFAULT_TAIL_TOL = 1e-12
# Symmetric support cap for custom rates.
CUSTOM_SUPPORT_CAP = 200
CUSTOM_TABLE_LENGTH = 512
# exp() overflows a double just above 709.
LOG_GUARD = 700.0


@dataclass(frozen=True)
class RateFunction:
    """Jump-rate function ``r`` on the integers.

    Use :meth:`exponential` or :meth:`custom` rather than the raw constructor.
    Custom rates are stored as the table ``r(1), r(2), ...``; values at
    ``z <= 0`` always come from ``r(z) = 1 / r(1 - z)``.
    """

    kind: str
    beta: float | None = None
    table: tuple[float, ...] = ()
    theta_bar: float = math.inf
    monotone: bool = True

    def __post_init__(self) -> None:
        if self.kind == "exponential":
            if self.beta is None or not (self.beta > 0 and math.isfinite(self.beta)):
                raise ValueError(f"exponential rate needs a positive finite beta, got {self.beta!r}")
        elif self.kind == "custom":
            if not self.table:
                raise ValueError("custom rate needs a non-empty table r(1), r(2), ...")
            if any(not (v > 0 and math.isfinite(v)) for v in self.table):
                raise ValueError("custom rate values must be positive and finite")
        else:
            raise ValueError(f"unknown rate kind {self.kind!r}")
        if not self.theta_bar > 0:
            raise ValueError("theta_bar must be strictly positive")

    @classmethod
    def exponential(cls, beta: float) -> RateFunction:
        return cls(kind="exponential", beta=float(beta), theta_bar=math.inf, monotone=True)

    @classmethod
    def custom(
        cls,
        values: Callable[[int], float] | Sequence[float],
        *,
        length: int = CUSTOM_TABLE_LENGTH,
        theta_bar: float | None = None,
    ) -> RateFunction:
        """Build a custom rate from ``r(z)`` for ``z >= 1``.

        ``values`` is either a callable evaluated on ``1..length`` or an
        explicit sequence.  When ``theta_bar`` is omitted it is estimated as
        the minimum of ``log r(n)`` over the upper half of the table, a finite
        stand-in for the liminf.
        """
        if callable(values):
            table = tuple(float(values(z)) for z in range(1, length + 1))
        else:
            table = tuple(float(v) for v in values)
        if not table:
            raise ValueError("custom rate needs at least one value")
        if theta_bar is None:
            tail = table[len(table) // 2 :]
            theta_bar = min(math.log(v) for v in tail) if min(tail) > 0 else 0.0
        monotone = table[0] >= 1.0 and all(a <= b for a, b in zip(table, table[1:]))
        return cls(kind="custom", table=table, theta_bar=float(theta_bar), monotone=monotone)

    @property
    def is_exponential(self) -> bool:
        return self.kind == "exponential"

    def log_rate(self, z: int) -> float:
        """``log r(z)``; raises :class:`RateRangeError` outside the table."""
        z = int(z)
        if self.kind == "exponential":
            return self.beta * z - 0.5 * self.beta
        if z >= 1:
            if z > len(self.table):
                raise RateRangeError(f"custom rate table ends at z={len(self.table)}, asked for {z}")
            return math.log(self.table[z - 1])
        return -self.log_rate(1 - z)

    def log_rates(self, z: np.ndarray) -> np.ndarray:
        """Vectorised ``log r`` over an integer array."""
        z = np.asarray(z, dtype=np.int64)
        if self.kind == "exponential":
            return self.beta * z - 0.5 * self.beta
        k = np.where(z >= 1, z, 1 - z)
        if k.size and int(k.max()) > len(self.table):
            raise RateRangeError(f"custom rate table ends at z={len(self.table)}")
        logs = np.log(np.asarray(self.table))[k - 1]
        return np.where(z >= 1, logs, -logs)

    def rates(self, z: np.ndarray) -> np.ndarray:
        """Vectorised ``r`` with an explicit overflow guard."""
        logs = self.log_rates(z)
        if logs.size and float(np.abs(logs).max()) > LOG_GUARD:
            raise RateRangeError("rate evaluation would overflow; |log r(z)| > 700")
        return np.exp(logs)

    def to_dict(self) -> dict:
        if self.kind == "exponential":
            return {"kind": "exponential", "beta": self.beta}
        return {"kind": "custom", "table": list(self.table), "theta_bar": self.theta_bar}

    @classmethod
    def from_dict(cls, data: dict) -> RateFunction:
        kind = data.get("kind")
        if kind == "exponential":
            return cls.exponential(float(data["beta"]))
        if kind == "custom":
            return cls.custom(data["table"], theta_bar=data.get("theta_bar"))
        raise ValueError(f"unknown rate kind {kind!r}")


def rate_eval(rf: RateFunction, z: int) -> float:
    """Return ``r(z)``."""
    log_r = rf.log_rate(z)
    if abs(log_r) > LOG_GUARD:
        raise RateRangeError(f"r({z}) overflows: log r = {log_r:.1f}")
    return math.exp(log_r)


def log_rate_factorial(rf: RateFunction, z: int) -> float:
    """``log r(z)!`` from ``r(0)! = 1`` and ``r(z+1)! = r(z)! * r(z+1)``."""
    z = int(z)
    if z >= 0:
        return math.fsum(rf.log_rate(y) for y in range(1, z + 1))
    return -math.fsum(rf.log_rate(y) for y in range(z + 1, 1))


def rate_factorial(rf: RateFunction, z: int) -> float:
    log_f = log_rate_factorial(rf, z)
    if abs(log_f) > LOG_GUARD:
        raise RateRangeError(f"r({z})! overflows: log = {log_f:.1f}")
    return math.exp(log_f)


def _log_factorial_range(rf: RateFunction, lo: int, hi: int) -> np.ndarray:
    """``log r(z)!`` for ``z = lo..hi`` by running the forward recursion."""
    steps = rf.log_rates(np.arange(lo + 1, hi + 1))
    return log_rate_factorial(rf, lo) + np.concatenate(([0.0], np.cumsum(steps)))


@dataclass(frozen=True, eq=False)
class SiteMeasure:
    """Truncated one-site measure ``mu_theta`` on ``z_lo..z_hi``.

    ``pmf`` is normalised on the window; ``log_Z`` is the log of the truncated
    partition sum.  ``tail_mass`` is the untruncated mass of the two edge atoms
    plus everything beyond them; it is always below ``tail_tol``.
    """

    theta: float
    rate: RateFunction
    z_lo: int
    z_hi: int
    pmf: np.ndarray
    log_pmf: np.ndarray
    log_Z: float
    tail_tol: float
    tail_mass: float

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.z_lo, self.z_hi + 1)

    @property
    def Z(self) -> float:
        return math.exp(self.log_Z)

    def pmf_at(self, z: int) -> float:
        if self.z_lo <= z <= self.z_hi:
            return float(self.pmf[z - self.z_lo])
        return 0.0

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.pmf)

    def to_dict(self) -> dict:
        return {**self.rate.to_dict(), "theta": self.theta, "tail_tol": self.tail_tol}

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["z", "pmf"])
            for z, p in zip(self.support, self.pmf):
                writer.writerow([int(z), repr(float(p))])


def _candidate_window(rf: RateFunction, theta: float, tail_tol: float) -> tuple[int, int]:
    if rf.is_exponential:
        center = math.floor(theta / rf.beta + 0.5)
        half = math.ceil(math.sqrt(2.0 * (math.log(1.0 / tail_tol) + 40.0) / rf.beta)) + 2
        return center - half, center + half
    return -CUSTOM_SUPPORT_CAP, CUSTOM_SUPPORT_CAP


@functools.lru_cache(maxsize=4096)
def _build_measure_cached(rf: RateFunction, theta: float, tail_tol: float) -> SiteMeasure:
    lo, hi = _candidate_window(rf, theta, tail_tol)
    z = np.arange(lo, hi + 1)
    log_w = theta * z - _log_factorial_range(rf, lo, hi)
    p = np.exp(log_w - logsumexp(log_w))
    if rf.is_exponential:
        ic = int(math.floor(theta / rf.beta + 0.5)) - lo
    else:
        ic = int(np.argmax(log_w))
        if max(p[0], p[-1]) > 1e-6 * tail_tol:
            raise ConvergenceError(
                f"custom partition sum at theta={theta} has not converged inside |z| <= {CUSTOM_SUPPORT_CAP}"
            )
    left = np.concatenate(([0.0], np.cumsum(p)))  # left[k] = mass of p[:k]
    right = np.concatenate(([0.0], np.cumsum(p[::-1])))  # right[k] = mass of the last k
    n = len(p)
    # The edge atoms count as tail too: identities such as E r(omega) = e^theta
    # lose exactly e^theta * pmf(edge) on a truncated window.
    for half in range(1, min(ic, n - 1 - ic) + 1):
        outside = left[ic - half + 1] + right[n - ic - half]
        if outside < tail_tol:
            break
    else:
        raise ConvergenceError(f"could not reach tail mass {tail_tol} at theta={theta}")
    sl = slice(ic - half, ic + half + 1)
    log_w_win = log_w[sl]
    log_Z = float(logsumexp(log_w_win))
    log_pmf = log_w_win - log_Z
    pmf = np.exp(log_pmf)
    pmf.setflags(write=False)
    log_pmf.setflags(write=False)
    return SiteMeasure(
        theta=theta,
        rate=rf,
        z_lo=int(z[ic - half]),
        z_hi=int(z[ic + half]),
        pmf=pmf,
        log_pmf=log_pmf,
        log_Z=log_Z,
        tail_tol=tail_tol,
        tail_mass=float(outside),
    )


def build_measure(rf: RateFunction, theta: float, tail_tol: float = DEFAULT_TAIL_TOL) -> SiteMeasure:
    """Build ``mu_theta`` truncated so that the excluded mass is below ``tail_tol``.

    Exponential rates get a window centred on ``round(theta / beta)``, the mode
    of the discrete Gaussian; custom rates are centred on their mode inside a
    hard cap of ``|z| <= 200``.
    """
    theta = float(theta)
    if not abs(theta) < rf.theta_bar:
        raise ThetaRangeError(f"|theta| = {abs(theta)} must be below theta_bar = {rf.theta_bar}")
    if not 0.0 < tail_tol < 1.0:
        raise ValueError("tail_tol must lie in (0, 1)")
    return _build_measure_cached(rf, theta, float(tail_tol))


def mean_u(m: SiteMeasure) -> float:
    """Expected slope ``E omega`` under ``m``."""
    return float(np.dot(m.support, m.pmf))


def variance_u(m: SiteMeasure) -> float:
    """Variance of ``omega``; equals ``d u / d theta``."""
    centred = m.support - mean_u(m)
    return float(np.dot(centred * centred, m.pmf))


def u_of_theta(rf: RateFunction, theta: float, tail_tol: float = DEFAULT_TAIL_TOL) -> float:
    return mean_u(build_measure(rf, theta, tail_tol))


def theta_of_u(
    rf: RateFunction,
    u: float,
    tol: float = 1e-13,
    tail_tol: float = DEFAULT_TAIL_TOL,
) -> float:
    """Invert the strictly increasing map ``theta -> u(theta)``."""

    def f(theta: float) -> float:
        return u_of_theta(rf, theta, tail_tol) - u

    if rf.is_exponential:
        # u(k * beta) = k for every integer k; one spare period on each side
        # keeps the bracket valid when u sits on an integer up to rounding.
        k = math.floor(u)
        lo, hi = rf.beta * (k - 1), rf.beta * (k + 2)
    else:
        limit = rf.theta_bar * (1 - 1e-9) if math.isfinite(rf.theta_bar) else math.inf
        lo, hi = -1.0, 1.0
        while f(lo) > 0:
            if lo <= -limit:
                raise ThetaRangeError(f"u = {u} is below the attainable range")
            lo = max(2 * lo, -limit)
        while f(hi) < 0:
            if hi >= limit:
                raise ThetaRangeError(f"u = {u} is above the attainable range")
            hi = min(2 * hi, limit)
    try:
        return float(brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500))
    except (ConvergenceError, RateRangeError) as exc:
        raise ThetaRangeError(f"u = {u} is outside the attainable range") from exc


def expected_rates(m: SiteMeasure) -> tuple[float, float]:
    """Return ``(E r(omega), E r(-omega))``; equal to ``(e^theta, e^-theta)``."""
    z = m.support
    right = float(np.sum(np.exp(m.rate.log_rates(z) + m.log_pmf)))
    left = float(np.sum(np.exp(m.rate.log_rates(-z) + m.log_pmf)))
    return right, left


def shift_identity_residual(
    rf: RateFunction, theta: float, delta: float, tail_tol: float = DEFAULT_TAIL_TOL
) -> float:
    """``max_z |mu_theta(z - 1) - mu_{theta + delta}(z)|``.

    Vanishes only for exponential rates with ``delta == beta``.
    """
    a = build_measure(rf, theta, tail_tol)
    b = build_measure(rf, theta + delta, tail_tol)
    lo = min(a.z_lo + 1, b.z_lo)
    hi = max(a.z_hi + 1, b.z_hi)
    return max(abs(a.pmf_at(z - 1) - b.pmf_at(z)) for z in range(lo, hi + 1))


@dataclass(frozen=True)
class ParameterProfile:
    """Site-indexed parameter vector with finitely many values.

    ``breakpoints`` holds ``(site, value)`` pairs: ``theta_i`` equals ``value``
    from ``site`` onwards until the next breakpoint, and ``theta_left`` for
    every site before the first one.  Redundant breakpoints are dropped, so
    the remaining sites are exactly the ``b`` with ``theta_{b-1} != theta_b``.
    """

    theta_left: float
    breakpoints: tuple[tuple[int, float], ...] = ()
    beta: float | None = None

    def __post_init__(self) -> None:
        theta_left = float(self.theta_left)
        if not math.isfinite(theta_left):
            raise ProfileError("theta_left must be finite")
        pairs = sorted((int(i), float(v)) for i, v in self.breakpoints)
        sites = [i for i, _ in pairs]
        if len(set(sites)) != len(sites):
            raise ProfileError(f"duplicate breakpoint sites in {sites}")
        cleaned = []
        current = theta_left
        for i, v in pairs:
            if not math.isfinite(v):
                raise ProfileError("profile values must be finite")
            if v != current:
                cleaned.append((i, v))
                current = v
        object.__setattr__(self, "theta_left", theta_left)
        object.__setattr__(self, "breakpoints", tuple(cleaned))
        if self.beta is not None and not self.beta > 0:
            raise ProfileError("beta must be positive")

    @classmethod
    def constant(cls, theta: float, beta: float | None = None) -> ParameterProfile:
        return cls(theta, (), beta)

    @classmethod
    def single_shock(
        cls, theta_left: float, theta_right: float, q: int, beta: float | None = None
    ) -> ParameterProfile:
        """``theta_left`` for ``i <= q - 1`` and ``theta_right`` for ``i >= q``."""
        return cls(theta_left, ((q, theta_right),), beta)

    @classmethod
    def from_values(
        cls, first_site: int, values: Iterable[float], beta: float | None = None
    ) -> ParameterProfile:
        """Explicit values on ``first_site, first_site + 1, ...``, extended flat."""
        values = [float(v) for v in values]
        if not values:
            raise ProfileError("need at least one value")
        return cls(values[0], tuple((first_site + k, v) for k, v in enumerate(values)), beta)

    @property
    def theta_right(self) -> float:
        return self.breakpoints[-1][1] if self.breakpoints else self.theta_left

    @property
    def discontinuities(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.breakpoints)

    @property
    def values(self) -> tuple[float, ...]:
        return (self.theta_left, *(v for _, v in self.breakpoints))

    def theta(self, i: int) -> float:
        k = bisect.bisect_right(self.discontinuities, i)
        return self.values[k]

    def thetas(self, sites: Iterable[int]) -> np.ndarray:
        idx = np.searchsorted(np.asarray(self.discontinuities, dtype=np.int64), np.asarray(list(sites)), side="right")
        return np.asarray(self.values)[idx]

    @property
    def is_decreasing(self) -> bool:
        vals = self.values
        return all(a >= b for a, b in zip(vals, vals[1:]))

    @property
    def is_beta_quantized(self) -> bool:
        if self.beta is None:
            return False
        vals = self.values
        for a, b in zip(vals, vals[1:]):
            k = (a - b) / self.beta
            if abs(k - round(k)) > 1e-9:
                return False
        return True

    def shifted(self, i: int, delta: float) -> ParameterProfile:
        """Same profile with ``theta_i`` replaced by ``theta_i + delta``."""
        new = dict(self.breakpoints)
        new[i] = self.theta(i) + delta
        new[i + 1] = self.theta(i + 1)
        return ParameterProfile(self.theta_left, tuple(new.items()), self.beta)

    def to_dict(self) -> dict:
        out = {"theta_left": self.theta_left, "breakpoints": [list(p) for p in self.breakpoints]}
        if self.beta is not None:
            out["beta"] = self.beta
        return out

    @classmethod
    def from_dict(cls, data: dict) -> ParameterProfile:
        return cls(
            float(data["theta_left"]),
            tuple((int(i), float(v)) for i, v in data.get("breakpoints", ())),
            data.get("beta"),
        )
