"""Flux, shock speeds and exact front tracking for decreasing step data.

The macroscopic flux is ``J(u) = e^{theta(u)} + e^{-theta(u)}`` where
``theta(u)`` inverts the mean slope.  A jump from ``u_l`` down to ``u_r`` moves
at ``(J(u_l) - J(u_r)) / (u_l - u_r)``; with a convex flux, neighbouring
shocks approach each other and merge, and front tracking follows them exactly
since between collisions every front moves on a straight line.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ProfileError
from .kernel import RateFunction, build_measure, expected_rates, theta_of_u, variance_u

__all__ = [
    "HYDRO_TAIL_TOL",
    "PiecewiseProfile",
    "flux_J",
    "flux_derivative",
    "rh_speed",
    "convexity_check",
    "Shock",
    "MergeEvent",
    "FrontTrackResult",
    "front_track",
]

HYDRO_TAIL_TOL = 1e-15
THETA_TOL = 1e-14
COLLISION_RTOL = 1e-12


@dataclass(frozen=True)
class PiecewiseProfile:
    """``u_left`` up to the first breakpoint, then the value paired with each ``x``."""

    u_left: float
    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        bps = tuple((float(x), float(u)) for x, u in self.breakpoints)
        xs = [x for x, _ in bps]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ProfileError(f"breakpoint positions must increase strictly: {xs}")
        us = [float(self.u_left), *(u for _, u in bps)]
        if any(b >= a for a, b in zip(us, us[1:])):
            raise ProfileError(f"values must decrease strictly across breakpoints: {us}")
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "u_left", float(self.u_left))

    @property
    def u_right(self) -> float:
        return self.breakpoints[-1][1] if self.breakpoints else self.u_left

    @property
    def values(self) -> tuple[float, ...]:
        return (self.u_left, *(u for _, u in self.breakpoints))

    def __call__(self, x: float) -> float:
        u = self.u_left
        for xb, ub in self.breakpoints:
            if x >= xb:
                u = ub
        return u

    def area(self, lo: float) -> float:
        """``int (u - u_right) dx`` from ``lo`` (left of every breakpoint) to the right."""
        vals = self.values
        return math.fsum((vals[k] - vals[k + 1]) * (x - lo) for k, (x, _) in enumerate(self.breakpoints))

    def write_csv(self, path: str | Path, pad: float = 1.0) -> None:
        """Staircase points ``(x, u)`` ready for a line plot."""
        rows = []
        xs = [x for x, _ in self.breakpoints] or [0.0]
        rows.append((xs[0] - pad, self.u_left))
        vals = self.values
        for k, (x, u) in enumerate(self.breakpoints):
            rows.append((x, vals[k]))
            rows.append((x, u))
        rows.append((xs[-1] + pad, self.u_right))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "u"])
            for x, u in rows:
                w.writerow([repr(x), repr(u)])

    def to_dict(self) -> dict:
        return {"u_left": self.u_left, "breakpoints": [list(b) for b in self.breakpoints]}

    @classmethod
    def from_dict(cls, data: dict) -> PiecewiseProfile:
        return cls(float(data["u_left"]), tuple((float(x), float(u)) for x, u in data["breakpoints"]))


def _theta(rf: RateFunction, u: float) -> float:
    return theta_of_u(rf, u, tol=THETA_TOL, tail_tol=HYDRO_TAIL_TOL)


def flux_J(rf: RateFunction, u: float, direct: bool = False) -> float:
    """``J(u) = 2 cosh(theta(u))``.

    With ``direct=True`` the expectation ``E r(omega) + E r(-omega)`` is summed
    over the site measure instead of using the closed form.
    """
    theta = _theta(rf, u)
    if direct:
        up, down = expected_rates(build_measure(rf, theta, HYDRO_TAIL_TOL))
        return up + down
    return 2.0 * math.cosh(theta)


def flux_derivative(rf: RateFunction, u: float) -> float:
    """``J'(u) = 2 sinh(theta) / Var(omega)``, since ``du/dtheta`` is the variance."""
    theta = _theta(rf, u)
    return 2.0 * math.sinh(theta) / variance_u(build_measure(rf, theta, HYDRO_TAIL_TOL))


def rh_speed(rf: RateFunction, u_left: float, u_right: float) -> float:
    if u_left == u_right:
        raise ValueError("a shock needs two different values")
    return (flux_J(rf, u_left) - flux_J(rf, u_right)) / (u_left - u_right)


def convexity_check(rf: RateFunction, grid: np.ndarray) -> tuple[bool, float]:
    """Whether all second differences of ``J`` on ``grid`` are positive, and their minimum."""
    grid = np.asarray(grid, dtype=float)
    if grid.size < 3:
        raise ValueError("need at least three grid points")
    j = np.array([flux_J(rf, float(u)) for u in grid])
    h0 = np.diff(grid)
    slopes = np.diff(j) / h0
    second = 2.0 * np.diff(slopes) / (h0[:-1] + h0[1:])
    return bool(np.all(second > 0)), float(second.min())


# ---------------------------------------------------------------------------
# Front tracking


@dataclass
class Shock:
    x: float
    u_left: float
    u_right: float
    speed: float
    ids: tuple[int, ...]


@dataclass(frozen=True)
class MergeEvent:
    t: float
    x: float
    u_left: float
    u_right: float
    merged_ids: tuple[int, ...]


@dataclass
class FrontTrackResult:
    t_end: float
    events: list[MergeEvent]
    shocks: list[Shock]
    area_errors: list[float] = field(default_factory=list)

    @property
    def profile(self) -> PiecewiseProfile:
        if not self.shocks:
            raise ProfileError("no shocks to describe")
        return PiecewiseProfile(self.shocks[0].u_left, tuple((s.x, s.u_right) for s in self.shocks))

    def write_events_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "u_left", "u_right", "merged_ids"])
            for e in self.events:
                w.writerow([repr(e.t), repr(e.x), repr(e.u_left), repr(e.u_right), " ".join(map(str, e.merged_ids))])


def _area(shocks: list[Shock], lo: float) -> float:
    return math.fsum((s.u_left - s.u_right) * (s.x - lo) for s in shocks)


def front_track(p: PiecewiseProfile, rf: RateFunction, t_end: float) -> FrontTrackResult:
    """Evolve every jump at its Rankine-Hugoniot speed, merging at collisions.

    All shocks that meet at the same instant and place merge in one event.
    ``area_errors`` records, for every event, the gap between the area under
    ``u - u_right`` and its prediction ``area(0) + (J(u_left) - J(u_right)) t``.
    """
    if not p.breakpoints:
        raise ProfileError("profile has no shocks")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    vals = p.values
    shocks = [
        Shock(x, vals[k], vals[k + 1], rh_speed(rf, vals[k], vals[k + 1]), (k,))
        for k, (x, _) in enumerate(p.breakpoints)
    ]
    lo = shocks[0].x - 1.0
    area0 = _area(shocks, lo)
    outflux = flux_J(rf, p.u_left) - flux_J(rf, p.u_right)
    events: list[MergeEvent] = []
    errors: list[float] = []
    t = 0.0
    while True:
        gaps = [
            (b.x - a.x) / (a.speed - b.speed) if a.speed > b.speed else math.inf
            for a, b in zip(shocks, shocks[1:])
        ]
        tau = min(gaps, default=math.inf)
        if t + tau > t_end:
            for s in shocks:
                s.x += s.speed * (t_end - t)
            break
        colliding = [k for k, g in enumerate(gaps) if g <= tau * (1 + COLLISION_RTOL)]
        for s in shocks:
            s.x += s.speed * tau
        t += tau
        groups: list[list[Shock]] = []
        k = 0
        while k < len(shocks):
            group = [shocks[k]]
            while k in colliding:
                k += 1
                group.append(shocks[k])
            k += 1
            for g in group[1:]:
                g.x = group[0].x
            groups.append(group)
        before = _area(shocks, lo)
        merged: list[Shock] = []
        for group in groups:
            if len(group) == 1:
                merged.append(group[0])
                continue
            x, ul, ur = group[0].x, group[0].u_left, group[-1].u_right
            ids = tuple(i for g in group for i in g.ids)
            merged.append(Shock(x, ul, ur, rh_speed(rf, ul, ur), ids))
            events.append(MergeEvent(t, x, ul, ur, ids))
        shocks = merged
        after = _area(shocks, lo)
        errors.append(max(abs(after - before), abs(after - (area0 + outflux * t))))
    return FrontTrackResult(t_end, events, shocks, errors)
