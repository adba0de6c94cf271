"""Exact generator actions and expectations under product measures.

Expectations of cylinder functions are computed as finite sums over the
product of the per-site truncated windows, so every quantity here is
deterministic and its truncation error is bounded by the windows' tail mass.

Three time derivatives of ``E phi`` at ``t = 0`` are available:

* :func:`lhs_derivative` -- ``E (L phi)`` straight from the generator;
* :func:`rhs_lemma51` -- the form with coordinate shifts
  ``omega -> omega^(i, +/-)``, valid for every admissible rate;
* :func:`rhs_theorem41` -- the form with parameter shifts
  ``theta_i -> theta_i +/- beta``, valid only for exponential rates.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .errors import ComplexityError, ProfileError
from .kernel import DEFAULT_TAIL_TOL, ParameterProfile, RateFunction, SiteMeasure, build_measure

__all__ = [
    "CylinderFunction",
    "SignedProfileCombination",
    "expect_cylinder",
    "generator_apply",
    "lhs_derivative",
    "rhs_lemma51",
    "rhs_theorem41",
    "derivative_combination",
    "tail_budget",
    "ChainLaw",
    "brute_force_evolution",
    "product_law",
    "mixture_law",
    "total_variation",
    "IdentityRecord",
    "identity_record",
    "identity_battery",
    "random_profile",
    "STANDARD_PHIS",
]

MAX_SUPPORT_WIDTH = 6
MAX_GRID_SIZE = 20_000_000
MAX_CHAIN_STATES = 100_000


@dataclass(frozen=True)
class CylinderFunction:
    """Function of ``omega_left, ..., omega_right``.

    ``evaluator`` receives one integer array per site (broadcastable against
    each other) and must return an array of the broadcast shape.  ``bound``
    is an optional ceiling on ``|phi|`` that :meth:`tabulate` enforces.
    """

    left: int
    right: int
    evaluator: Callable[..., np.ndarray]
    bound: float | None = None
    name: str = "phi"

    def __post_init__(self) -> None:
        if self.right < self.left:
            raise ValueError("empty support")

    @property
    def sites(self) -> range:
        return range(self.left, self.right + 1)

    @property
    def width(self) -> int:
        return self.right - self.left + 1

    def __call__(self, *coords: np.ndarray) -> np.ndarray:
        return np.asarray(self.evaluator(*coords), dtype=float)

    def tabulate(self, windows: list[np.ndarray]) -> np.ndarray:
        """Explicit table of ``phi`` on the product of per-site windows."""
        if len(windows) != self.width:
            raise ValueError(f"need {self.width} windows, got {len(windows)}")
        grids = np.ix_(*windows)
        table = np.broadcast_to(self(*grids), tuple(len(w) for w in windows))
        if self.bound is not None and np.abs(table).max() > self.bound:
            raise ValueError(f"{self.name} exceeds its declared bound {self.bound}")
        return table

    def shifted(self, site: int, step: int) -> CylinderFunction:
        """``omega -> phi(omega^(site, +))`` for ``step = +1`` (``-1`` for minus)."""
        if site not in self.sites:
            return self
        k = site - self.left

        def evaluate(*w):
            w = list(w)
            w[k] = w[k] + step
            return self(*w)

        sign = "+" if step > 0 else "-"
        return CylinderFunction(self.left, self.right, evaluate, self.bound, f"{self.name}^({site},{sign})")

    # Common test functions -------------------------------------------------

    @classmethod
    def coordinate(cls, i: int) -> CylinderFunction:
        return cls(i, i, lambda w: w * 1.0, name=f"w{i}")

    @classmethod
    def square(cls, i: int) -> CylinderFunction:
        return cls(i, i, lambda w: w * w * 1.0, name=f"w{i}^2")

    @classmethod
    def neighbour_product(cls, i: int) -> CylinderFunction:
        return cls(i, i + 1, lambda a, b: a * b * 1.0, name=f"w{i}*w{i + 1}")

    @classmethod
    def indicator(cls, i: int, value: int = 0) -> CylinderFunction:
        return cls(i, i, lambda w: (w == value).astype(float), bound=1.0, name=f"1[w{i}={value}]")

    @classmethod
    def constant(cls, c: float = 1.0, site: int = 0) -> CylinderFunction:
        return cls(site, site, lambda w: np.full(np.shape(w), float(c)), bound=abs(c), name=f"const{c:g}")


def _site_measures(
    profile: ParameterProfile, rf: RateFunction, sites: range, tail_tol: float
) -> list[SiteMeasure]:
    return [build_measure(rf, profile.theta(i), tail_tol) for i in sites]


def expect_cylinder(
    profile: ParameterProfile,
    phi: CylinderFunction,
    rf: RateFunction,
    tail_tol: float = DEFAULT_TAIL_TOL,
    max_width: int = MAX_SUPPORT_WIDTH,
) -> float:
    """``E phi`` under the product measure with marginals ``mu_{theta_i}``."""
    if phi.width > max_width:
        raise ComplexityError(f"support width {phi.width} exceeds the guard {max_width}")
    measures = _site_measures(profile, rf, phi.sites, tail_tol)
    size = math.prod(len(m.pmf) for m in measures)
    if size > MAX_GRID_SIZE:
        raise ComplexityError(f"product window has {size} points, more than {MAX_GRID_SIZE}")
    table = phi.tabulate([m.support for m in measures])
    # Contract one site at a time, starting from the last axis.
    for m in reversed(measures):
        table = table @ m.pmf
    return float(table)


def generator_apply(phi: CylinderFunction, rf: RateFunction) -> CylinderFunction:
    """``L phi``: sum over bonds ``(i, i+1)`` with ``i`` in ``[left - 1, right]``.

    A brick on bond ``(i, i+1)`` sends ``omega_i -> omega_i - 1`` and
    ``omega_{i+1} -> omega_{i+1} + 1`` at rate ``r(omega_i) + r(-omega_{i+1})``.
    """
    nbonds = phi.width + 1

    def evaluate(*w):
        w = [np.asarray(c) for c in w]
        base = phi(*w[1:-1])
        total = np.zeros(np.broadcast_shapes(*(c.shape for c in w)))
        for j in range(nbonds):
            rate = rf.rates(w[j]) + rf.rates(-w[j + 1])
            moved = list(w)
            moved[j] = w[j] - 1
            moved[j + 1] = w[j + 1] + 1
            total = total + rate * (phi(*moved[1:-1]) - base)
        return total

    return CylinderFunction(phi.left - 1, phi.right + 1, evaluate, name=f"L[{phi.name}]")


def lhs_derivative(
    profile: ParameterProfile,
    phi: CylinderFunction,
    rf: RateFunction,
    tail_tol: float = DEFAULT_TAIL_TOL,
) -> float:
    """``d/dt E phi`` at ``t = 0``, i.e. ``E (L phi)``."""
    return expect_cylinder(profile, generator_apply(phi, rf), rf, tail_tol, max_width=MAX_SUPPORT_WIDTH + 2)


def rhs_lemma51(
    profile: ParameterProfile,
    phi: CylinderFunction,
    rf: RateFunction,
    tail_tol: float = DEFAULT_TAIL_TOL,
) -> float:
    """Derivative written with shifted configurations; holds for any admissible rate."""
    base = expect_cylinder(profile, phi, rf, tail_tol)
    total = 0.0
    for b in profile.discontinuities:
        prev, here = profile.theta(b - 1), profile.theta(b)
        # omega_b + 1 with weight e^{theta_{b-1}} - e^{theta_b}
        if b in phi.sites:
            up = expect_cylinder(profile, phi.shifted(b, +1), rf, tail_tol)
            total += (math.exp(prev) - math.exp(here)) * (up - base)
        # omega_{b-1} - 1 with weight e^{-theta_b} - e^{-theta_{b-1}}
        if b - 1 in phi.sites:
            down = expect_cylinder(profile, phi.shifted(b - 1, -1), rf, tail_tol)
            total += (math.exp(-here) - math.exp(-prev)) * (down - base)
    return total


@dataclass(frozen=True)
class SignedProfileCombination:
    """Finite signed combination ``sum_k c_k mu^(theta^k)`` of product measures."""

    terms: tuple[tuple[float, ParameterProfile], ...]

    @property
    def total_mass(self) -> float:
        return math.fsum(c for c, _ in self.terms)

    def expect(
        self, phi: CylinderFunction, rf: RateFunction, tail_tol: float = DEFAULT_TAIL_TOL
    ) -> float:
        return math.fsum(
            c * expect_cylinder(p, phi, rf, tail_tol) for c, p in self.terms if c != 0.0
        )


def derivative_combination(profile: ParameterProfile, beta: float) -> SignedProfileCombination:
    """Time derivative of ``mu^(theta)`` as a combination of shifted profiles.

    Each discontinuity ``b`` (``theta_{b-1} != theta_b``) contributes
    ``e^{theta_{b-1}} - e^{theta_b}`` times the profile with ``theta_b + beta``
    and ``e^{-theta_b} - e^{-theta_{b-1}}`` times the profile with
    ``theta_{b-1} - beta``; the base profile carries minus their sum.
    """
    terms = []
    for b in profile.discontinuities:
        prev, here = profile.theta(b - 1), profile.theta(b)
        terms.append((math.exp(prev) - math.exp(here), profile.shifted(b, beta)))
        terms.append((math.exp(-here) - math.exp(-prev), profile.shifted(b - 1, -beta)))
    base = -math.fsum(c for c, _ in terms)
    return SignedProfileCombination(((base, profile), *terms))


def rhs_theorem41(
    profile: ParameterProfile,
    phi: CylinderFunction,
    rf: RateFunction,
    beta: float | None = None,
    tail_tol: float = DEFAULT_TAIL_TOL,
) -> float:
    """Derivative written with shifted parameters.

    ``beta`` defaults to the rate's own parameter, then to ``profile.beta``.
    For non-exponential rates the value is still computed; it simply does not
    match :func:`lhs_derivative`.
    """
    if beta is None:
        beta = rf.beta if rf.is_exponential else profile.beta
    if beta is None:
        raise ValueError("a parameter shift beta is required for non-exponential rates")
    return derivative_combination(profile, beta).expect(phi, rf, tail_tol)


def tail_budget(
    profile: ParameterProfile,
    phi: CylinderFunction,
    rf: RateFunction,
    tail_tol: float = DEFAULT_TAIL_TOL,
) -> float:
    """100x the truncation bound for ``E (L phi)``: leaked mass times ``max |L phi|``."""
    lphi = generator_apply(phi, rf)
    measures = _site_measures(profile, rf, lphi.sites, tail_tol)
    table = lphi.tabulate([m.support for m in measures])
    leaked = sum(m.tail_mass for m in measures)
    return 100.0 * leaked * float(np.abs(table).max())


# ---------------------------------------------------------------------------
# Finite-chain oracle


@dataclass(frozen=True, eq=False)
class ChainLaw:
    """Law of ``(omega_lo, ..., omega_hi)`` on a product of value windows.

    ``probs`` has one axis per site; axis ``k`` indexes ``z_lo .. z_hi`` at
    site ``sites.start + k``.  ``leak`` is the integrated probability flux of
    moves that were clipped at the value-window edges.
    """

    sites: range
    z_lo: int
    z_hi: int
    probs: np.ndarray
    leak: float = 0.0
    states: int = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "states", int(self.probs.size))

    @property
    def mass(self) -> float:
        return float(self.probs.sum())

    def marginal(self, site: int) -> np.ndarray:
        k = site - self.sites.start
        axes = tuple(a for a in range(self.probs.ndim) if a != k)
        return self.probs.sum(axis=axes)


def _window_pmf(m: SiteMeasure, z_lo: int, z_hi: int) -> np.ndarray:
    p = np.array([m.pmf_at(z) for z in range(z_lo, z_hi + 1)])
    return p / p.sum()


def product_law(
    profile: ParameterProfile,
    rf: RateFunction,
    sites: range,
    z_window: tuple[int, int],
    tail_tol: float = DEFAULT_TAIL_TOL,
) -> ChainLaw:
    """Product measure restricted (and renormalised per site) to ``z_window``."""
    z_lo, z_hi = z_window
    probs = np.ones(())
    for i in sites:
        probs = np.multiply.outer(probs, _window_pmf(build_measure(rf, profile.theta(i), tail_tol), z_lo, z_hi))
    return ChainLaw(sites, z_lo, z_hi, probs)


def mixture_law(
    weighted: list[tuple[float, ParameterProfile]],
    rf: RateFunction,
    sites: range,
    z_window: tuple[int, int],
    tail_tol: float = DEFAULT_TAIL_TOL,
) -> ChainLaw:
    """``sum_k w_k`` times the windowed product law of profile ``k``."""
    cache: dict[tuple[float, ...], np.ndarray] = {}
    probs = None
    for w, prof in weighted:
        key = tuple(prof.theta(i) for i in sites)
        if key not in cache:
            cache[key] = product_law(prof, rf, sites, z_window, tail_tol).probs
        term = w * cache[key]
        probs = term if probs is None else probs + term
    if probs is None:
        raise ValueError("empty mixture")
    return ChainLaw(sites, z_window[0], z_window[1], probs)


def total_variation(a: ChainLaw, b: ChainLaw) -> float:
    if a.probs.shape != b.probs.shape or a.z_lo != b.z_lo or a.sites != b.sites:
        raise ValueError("laws live on different grids")
    return 0.5 * float(np.abs(a.probs - b.probs).sum())


def brute_force_evolution(
    profile: ParameterProfile,
    rf: RateFunction,
    sites: range,
    z_window: tuple[int, int],
    t: float,
    boundary: str = "reservoir",
    tail_tol: float = DEFAULT_TAIL_TOL,
) -> ChainLaw:
    """Exact law at time ``t`` of the bricklayers' chain on ``sites``.

    The full generator on ``z_window ** len(sites)`` is exponentiated against
    the initial windowed product law.  Moves that would leave the value window
    are suppressed; their integrated rate is returned as ``leak``.

    With ``boundary="reservoir"`` the two outer bonds stay active with the
    outside neighbour averaged over its initial marginal: the left bond adds a
    brick to ``omega_lo`` at rate ``e^{theta_{lo-1}} + r(-omega_lo)`` and the
    right bond removes one from ``omega_hi`` at ``r(omega_hi) + e^{-theta_{hi+1}}``.
    ``boundary="closed"`` drops those bonds.
    """
    if boundary not in ("reservoir", "closed"):
        raise ValueError(f"unknown boundary {boundary!r}")
    z_lo, z_hi = z_window
    nv = z_hi - z_lo + 1
    ns = len(sites)
    if nv < 2 or ns < 1:
        raise ValueError("need at least one site and two values")
    n_states = nv**ns
    if n_states > MAX_CHAIN_STATES:
        raise ComplexityError(f"{n_states} chain states exceed the guard {MAX_CHAIN_STATES}")

    shape = (nv,) * ns
    digits = np.array(np.unravel_index(np.arange(n_states), shape))  # (ns, n_states)
    omega = digits + z_lo
    strides = np.array([nv ** (ns - 1 - k) for k in range(ns)])
    src = np.arange(n_states)

    rows, cols, vals = [], [], []
    leak_rate = np.zeros(n_states)

    def add_moves(rate, target_ok, target):
        ok = target_ok
        rows.append(target[ok])
        cols.append(src[ok])
        vals.append(rate[ok])
        rows.append(src[ok])
        cols.append(src[ok])
        vals.append(-rate[ok])
        leak_rate[~ok] += rate[~ok]

    for k in range(ns - 1):
        rate = rf.rates(omega[k]) + rf.rates(-omega[k + 1])
        ok = (digits[k] > 0) & (digits[k + 1] < nv - 1)
        target = src - strides[k] + strides[k + 1]
        add_moves(rate, ok, target)
    if boundary == "reservoir":
        first, last = sites.start, sites.stop - 1
        rate = math.exp(profile.theta(first - 1)) + rf.rates(-omega[0])
        add_moves(rate, digits[0] < nv - 1, src + strides[0])
        rate = rf.rates(omega[-1]) + math.exp(-profile.theta(last + 1))
        add_moves(rate, digits[-1] > 0, src - strides[-1])

    # Extra row integrates the clipped flux alongside the law.
    rows.append(np.full(n_states, n_states))
    cols.append(src)
    vals.append(leak_rate)
    gen = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_states + 1, n_states + 1),
    )
    p0 = np.append(product_law(profile, rf, sites, z_window, tail_tol).probs.ravel(), 0.0)
    if t == 0:
        pt = p0
    else:
        pt = expm_multiply(gen * float(t), p0)
    probs = np.clip(pt[:-1], 0.0, None).reshape(shape)
    return ChainLaw(sites, z_lo, z_hi, probs, leak=float(pt[-1]))


# ---------------------------------------------------------------------------
# Verification batteries


STANDARD_PHIS: tuple[Callable[[int], CylinderFunction], ...] = (
    CylinderFunction.coordinate,
    CylinderFunction.square,
    CylinderFunction.neighbour_product,
    CylinderFunction.indicator,
)


def random_profile(rng: np.random.Generator, beta: float | None = None, span: float = 1.5) -> ParameterProfile:
    """A profile with 2-4 arbitrary steps near the origin (not necessarily monotone)."""
    k = int(rng.integers(2, 5))
    sites = sorted(rng.choice(np.arange(-2, 4), size=k, replace=False).tolist())
    values = rng.uniform(-span, span, size=k + 1)
    return ParameterProfile(float(values[0]), tuple(zip(sites, values[1:].tolist())), beta)


@dataclass(frozen=True)
class IdentityRecord:
    profile_id: int
    phi_id: str
    lhs: float
    rhs_lemma51: float
    rhs_theorem41: float
    tail_budget: float

    @property
    def residual_lemma51(self) -> float:
        return abs(self.lhs - self.rhs_lemma51)

    @property
    def residual_theorem41(self) -> float:
        return abs(self.lhs - self.rhs_theorem41)


def identity_record(
    profile_id: int,
    profile: ParameterProfile,
    phi: CylinderFunction,
    rf: RateFunction,
    beta: float | None = None,
    tail_tol: float = DEFAULT_TAIL_TOL,
) -> IdentityRecord:
    return IdentityRecord(
        profile_id=profile_id,
        phi_id=phi.name,
        lhs=lhs_derivative(profile, phi, rf, tail_tol),
        rhs_lemma51=rhs_lemma51(profile, phi, rf, tail_tol),
        rhs_theorem41=rhs_theorem41(profile, phi, rf, beta, tail_tol),
        tail_budget=tail_budget(profile, phi, rf, tail_tol),
    )


def identity_battery(
    profiles: list[ParameterProfile],
    rf: RateFunction,
    sites: tuple[int, ...] = (0,),
    beta: float | None = None,
    tail_tol: float = DEFAULT_TAIL_TOL,
) -> list[IdentityRecord]:
    """Evaluate all three derivatives for every profile and standard test function."""
    if not profiles:
        raise ProfileError("empty profile list")
    out = []
    for pid, prof in enumerate(profiles):
        for i, make in itertools.product(sites, STANDARD_PHIS):
            out.append(identity_record(pid, prof, make(i), rf, beta, tail_tol))
    return out
