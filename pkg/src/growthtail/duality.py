"""Convex-duality engine for long-horizon growth-target problems.

A model backend supplies a convex dual value curve Lambda(theta) (the
long-run scaled log-Laplace value of the average growth rate, optimized
over strategies).  This module converts such a curve into decay rates of
tail probabilities by Fenchel-Legendre conjugation:

    upside   v+(l) = inf_{theta in [0, theta_bar)} [Lambda(theta) - theta*l]
    downside v-(l) = inf_{theta <= 0}              [Lambda(theta) - theta*l]

Because Lambda is convex, the infimum is located by solving the monotone
first-order condition Lambda'(theta) = l with bisection.  The engine only
needs point evaluations of the curve (a finite-difference derivative is
used when the model supplies none), so it works for black-box curves.

Regimes of the conjugate:

* ``FREE`` (upside, l <= Lambda'(0)): the rate is 0; no optimal tilt
  exists, only a nearly optimal sequence (see :func:`near_optimal_tilt`).
* ``INTERIOR``: the rate is Lambda(theta*) - theta* l at the unique tilt
  theta* with Lambda'(theta*) = l.
* ``UNREACHABLE`` (downside, l < Lambda'(-inf)): the rate is minus
  infinity, represented by the explicit :data:`MINUS_INFINITY` sentinel,
  never by a float.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

from .errors import BeyondSteepLimit, BracketFailure, TargetOutOfRange

__all__ = [
    "Side",
    "Regime",
    "MINUS_INFINITY",
    "RateValue",
    "DualCurve",
    "FrontierPoint",
    "CurveDiagnostics",
    "solve_tilt",
    "conjugate_upside",
    "conjugate_downside",
    "near_optimal_tilt",
    "frontier",
    "check_curve",
]

# Relative clamp distance from the right domain endpoint, and the derivative
# magnitude beyond which the boundary limit is treated as +infinity.
_BOUNDARY_CLAMP = 1e-9
_STEEP_THRESHOLD = 1e12
_TILT_FTOL = 1e-10
_MAX_BRACKET_DOUBLINGS = 60


class Side(enum.Enum):
    """Which tail of the average growth rate is being controlled."""

    UPSIDE = "up"
    DOWNSIDE = "down"


class Regime(enum.Enum):
    FREE = "free"
    INTERIOR = "interior"
    UNREACHABLE = "unreachable"


class _MinusInfinityType:
    """Explicit sentinel for a rate of minus infinity (never a float)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "MINUS_INFINITY"

    def __float__(self):
        return float("-inf")


MINUS_INFINITY = _MinusInfinityType()


@dataclass(frozen=True)
class RateValue:
    """Decay rate of a tail probability, with the tilt that attains it.

    ``value`` is a nonpositive float for the FREE and INTERIOR regimes and
    the :data:`MINUS_INFINITY` sentinel for UNREACHABLE.  ``tilt`` is
    present only in the INTERIOR regime.
    """

    value: object
    tilt: Optional[float]
    regime: Regime

    @classmethod
    def free(cls) -> "RateValue":
        return cls(0.0, None, Regime.FREE)

    @classmethod
    def interior(cls, value: float, tilt: float) -> "RateValue":
        return cls(float(value), float(tilt), Regime.INTERIOR)

    @classmethod
    def unreachable(cls) -> "RateValue":
        return cls(MINUS_INFINITY, None, Regime.UNREACHABLE)

    def as_float(self) -> float:
        """The rate as a float, with UNREACHABLE mapped to -inf."""
        if self.regime is Regime.UNREACHABLE:
            return float("-inf")
        return float(self.value)


@dataclass(frozen=True)
class FrontierPoint:
    """One row of a rate-frontier sweep."""

    target: float
    rate: Optional[RateValue]
    policy_handle: object = None
    error: Optional[str] = None


class DualCurve:
    """Evaluable convex dual value curve with derivative access.

    Upside curves live on [0, theta_bar) with theta_bar in (0, +inf];
    downside curves live on (-inf, 0].  Lambda(0) = 0 always.  Evaluation
    beyond the right endpoint is clamped just inside it, so that steep
    curves (derivative diverging at theta_bar) never overflow.

    The derivative is the model-supplied callable when available and a
    central finite difference (step ``max(1e-6, 1e-6*|theta|)``, shrunk
    and one-sided near domain endpoints) otherwise.

    ``attainment_assumed`` records the standing assumption that an optimal
    strategy attains the curve value at each interior tilt; the engine
    cannot verify it for a black-box curve and does not try.
    """

    def __init__(
        self,
        side: Side,
        evaluate: Callable[[float], float],
        deriv: Optional[Callable[[float], float]] = None,
        theta_bar: float = math.inf,
        deriv_at_zero: Optional[float] = None,
        deriv_at_lower_limit: Optional[float] = None,
        deriv_at_upper_limit: Optional[float] = None,
        steep: Optional[bool] = None,
        attainment_assumed: bool = True,
        name: str = "",
    ):
        if side is Side.DOWNSIDE:
            theta_bar = 0.0
        elif not theta_bar > 0.0:
            raise ValueError("theta_bar must be positive for an upside curve")
        self.side = side
        self.theta_bar = float(theta_bar)
        self._evaluate = evaluate
        self._deriv = deriv
        self.attainment_assumed = attainment_assumed
        self.name = name

        if deriv_at_zero is None:
            deriv_at_zero = deriv(0.0) if deriv is not None else self._fd_deriv(0.0)
        self.deriv_at_zero = float(deriv_at_zero)
        if side is Side.DOWNSIDE:
            if deriv_at_lower_limit is None:
                deriv_at_lower_limit = self._estimate_lower_limit()
            self.deriv_at_lower_limit = float(deriv_at_lower_limit)
            self.deriv_at_upper_limit = self.deriv_at_zero
            self.steep = False
        else:
            self.deriv_at_lower_limit = None
            if deriv_at_upper_limit is None:
                deriv_at_upper_limit = self._probe_upper_limit()
            self.deriv_at_upper_limit = float(deriv_at_upper_limit)
            self.steep = bool(steep) if steep is not None else math.isinf(
                self.deriv_at_upper_limit
            )
            if self.steep:
                self.deriv_at_upper_limit = math.inf

    # -- evaluation ---------------------------------------------------

    def clamp(self, theta: float) -> float:
        """Pull theta just inside the domain when it sits on/past an endpoint."""
        if self.side is Side.UPSIDE:
            hi = self.theta_bar
            if math.isfinite(hi) and theta >= hi:
                return hi * (1.0 - _BOUNDARY_CLAMP)
            return max(theta, 0.0)
        return min(theta, 0.0)

    def value(self, theta: float) -> float:
        """Lambda(theta), evaluated at the clamped tilt."""
        return float(self._evaluate(self.clamp(theta)))

    def deriv(self, theta: float) -> float:
        """Lambda'(theta): analytic when supplied, finite difference otherwise."""
        theta = self.clamp(theta)
        if self._deriv is not None:
            return float(self._deriv(theta))
        return self._fd_deriv(theta)

    # -- internals ----------------------------------------------------

    def _fd_deriv(self, theta: float) -> float:
        h = max(1e-6, 1e-6 * abs(theta))
        if self.side is Side.UPSIDE:
            if math.isfinite(self.theta_bar):
                gap = self.theta_bar - theta
                h = min(h, gap / 8.0) if gap > 0 else h
            if theta - h < 0.0:
                f0 = self._evaluate(theta)
                f1 = self._evaluate(theta + h)
                f2 = self._evaluate(theta + 2.0 * h)
                return (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h)
        else:
            if theta + h > 0.0:
                f0 = self._evaluate(theta)
                f1 = self._evaluate(theta - h)
                f2 = self._evaluate(theta - 2.0 * h)
                return (3.0 * f0 - 4.0 * f1 + f2) / (2.0 * h)
        return (self._evaluate(theta + h) - self._evaluate(theta - h)) / (2.0 * h)

    def _probe_upper_limit(self) -> float:
        """Numeric derivative limit at theta_bar; values past 1e12 count as +inf."""
        if math.isinf(self.theta_bar):
            prev = self.deriv(1.0)
            for k in range(1, 60):
                cur = self.deriv(float(2**k))
                if cur > _STEEP_THRESHOLD:
                    return math.inf
                if abs(cur - prev) <= max(1e-10, 1e-8 * abs(cur)):
                    return cur
                prev = cur
            return prev
        probe = self.theta_bar * (1.0 - _BOUNDARY_CLAMP)
        d = self._fd_deriv(probe) if self._deriv is None else float(self._deriv(probe))
        return math.inf if d > _STEEP_THRESHOLD else d

    def _estimate_lower_limit(self) -> float:
        """Estimate Lambda'(-inf) along theta = -2^k until the slope settles."""
        prev = self.deriv(-1.0)
        for k in range(1, 60):
            cur = self.deriv(-float(2**k))
            if abs(cur - prev) <= max(1e-10, 1e-8 * abs(cur)):
                return cur
            prev = cur
        return prev


def solve_tilt(curve: DualCurve, target: float) -> float:
    """Solve Lambda'(theta) = target by bisection on the monotone derivative.

    The target must lie strictly between the derivative limits at the
    domain endpoints; otherwise TargetOutOfRange is raised.  BracketFailure
    signals that the expanding search interval never bracketed the target
    (a non-steep curve, or inconsistent curve data).
    """
    ell = float(target)
    if curve.side is Side.UPSIDE:
        if ell <= curve.deriv_at_zero:
            raise TargetOutOfRange(
                f"target {ell} at or below the derivative at zero "
                f"({curve.deriv_at_zero})"
            )
        if math.isfinite(curve.deriv_at_upper_limit) and ell >= curve.deriv_at_upper_limit:
            raise TargetOutOfRange(
                f"target {ell} at or above the boundary derivative limit "
                f"({curve.deriv_at_upper_limit})"
            )
        lo = 1e-12 * min(curve.theta_bar, 1.0) if math.isfinite(curve.theta_bar) else 1e-12
        if math.isfinite(curve.theta_bar):
            hi = curve.theta_bar * (1.0 - _BOUNDARY_CLAMP)
            if curve.deriv(hi) <= ell:
                raise BracketFailure(
                    f"derivative never exceeds target {ell} inside the domain"
                )
        else:
            hi = 1.0
            for _ in range(_MAX_BRACKET_DOUBLINGS):
                if curve.deriv(hi) > ell:
                    break
                hi *= 2.0
            else:
                raise BracketFailure(
                    f"derivative never exceeds target {ell} up to theta={hi}"
                )
    else:
        if ell >= curve.deriv_at_zero:
            raise TargetOutOfRange(
                f"target {ell} at or above the derivative at zero "
                f"({curve.deriv_at_zero})"
            )
        if ell <= curve.deriv_at_lower_limit:
            raise TargetOutOfRange(
                f"target {ell} at or below the derivative limit at -inf "
                f"({curve.deriv_at_lower_limit})"
            )
        hi = -1e-12
        lo = -1.0
        for _ in range(_MAX_BRACKET_DOUBLINGS):
            if curve.deriv(lo) < ell:
                break
            lo *= 2.0
        else:
            raise BracketFailure(
                f"derivative never falls below target {ell} down to theta={lo}"
            )

    # Bisection on the nondecreasing derivative; runs to floating-point
    # interval collapse so the tilt itself is resolved, not just the target.
    mid = 0.5 * (lo + hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if curve.deriv(mid) < ell:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, abs(lo), abs(hi)):
            break
    mid = 0.5 * (lo + hi)
    if abs(curve.deriv(mid) - ell) > _TILT_FTOL * max(1.0, abs(ell)):
        raise BracketFailure(
            f"bisection stalled at theta={mid} with derivative residual "
            f"{curve.deriv(mid) - ell:.3e}"
        )
    return mid


def conjugate_upside(curve: DualCurve, target: float) -> RateValue:
    """Upside-chance decay rate v+(target) of the given dual curve.

    Raises BeyondSteepLimit when the curve has a finite boundary derivative
    limit and the target sits at or beyond it (the conjugation does not
    cover such targets).
    """
    if curve.side is not Side.UPSIDE:
        raise ValueError("conjugate_upside requires an upside curve")
    ell = float(target)
    if math.isfinite(curve.deriv_at_upper_limit) and ell >= curve.deriv_at_upper_limit:
        raise BeyondSteepLimit(
            f"target {ell} is not below the boundary derivative limit "
            f"{curve.deriv_at_upper_limit}; the curve is not steep enough"
        )
    if ell <= curve.deriv_at_zero:
        return RateValue.free()
    theta = solve_tilt(curve, ell)
    return RateValue.interior(curve.value(theta) - theta * ell, theta)


def conjugate_downside(curve: DualCurve, target: float) -> RateValue:
    """Downside-risk decay rate v-(target) of the given dual curve.

    Targets below the derivative limit at -inf are unreachable: the decay
    rate is minus infinity (some strategy keeps the growth rate above the
    target with superexponentially small failure probability).
    """
    if curve.side is not Side.DOWNSIDE:
        raise ValueError("conjugate_downside requires a downside curve")
    ell = float(target)
    if ell >= curve.deriv_at_zero:
        raise TargetOutOfRange(
            f"target {ell} at or above the derivative at zero "
            f"({curve.deriv_at_zero})"
        )
    if ell < curve.deriv_at_lower_limit:
        return RateValue.unreachable()
    theta = solve_tilt(curve, ell)
    return RateValue.interior(curve.value(theta) - theta * ell, theta)


def near_optimal_tilt(curve: DualCurve, n: int) -> float:
    """The n-th nearly optimal tilt theta_n for free-regime upside targets.

    theta_n solves Lambda'(theta_n) = Lambda'(0) + 1/n; the sequence
    decreases to 0 as n grows.
    """
    if curve.side is not Side.UPSIDE:
        raise ValueError("near_optimal_tilt requires an upside curve")
    if n < 1:
        raise ValueError("n must be a positive integer")
    return solve_tilt(curve, curve.deriv_at_zero + 1.0 / n)


def frontier(
    curve: DualCurve,
    targets: Sequence[float],
    policy_fn: Optional[Callable[[float, RateValue], object]] = None,
) -> list[FrontierPoint]:
    """Tabulate the rate function over a sorted target grid.

    Per-point failures are recorded in the row (``error`` field) and do
    not abort the sweep.  ``policy_fn(target, rate)``, when given, builds
    an opaque policy handle for each successful row.
    """
    targets = [float(t) for t in targets]
    if any(b < a for a, b in zip(targets, targets[1:])):
        raise ValueError("target grid must be sorted ascending")
    out: list[FrontierPoint] = []
    for ell in targets:
        try:
            if curve.side is Side.UPSIDE:
                rate = conjugate_upside(curve, ell)
            else:
                rate = conjugate_downside(curve, ell)
            handle = policy_fn(ell, rate) if policy_fn is not None else None
            out.append(FrontierPoint(ell, rate, handle))
        except (TargetOutOfRange, BracketFailure, BeyondSteepLimit) as exc:
            out.append(FrontierPoint(ell, None, None, f"{type(exc).__name__}: {exc}"))
    return out


@dataclass
class CurveDiagnostics:
    """Sampled-grid health report for a dual curve."""

    value_at_zero: float
    convexity_violation: float
    monotonicity_violation: float
    tol: float = 1e-9

    @property
    def ok(self) -> bool:
        return (
            abs(self.value_at_zero) <= self.tol
            and self.convexity_violation <= self.tol
            and self.monotonicity_violation <= self.tol
        )


def check_curve(curve: DualCurve, thetas: Iterable[float], tol: float = 1e-9) -> CurveDiagnostics:
    """Check Lambda(0)=0, convexity, and derivative monotonicity on a grid."""
    grid = sorted(curve.clamp(float(t)) for t in thetas)
    vals = [curve.value(t) for t in grid]
    ders = [curve.deriv(t) for t in grid]
    conv = 0.0
    for (t1, v1), (t2, v2), (t3, v3) in zip(
        zip(grid, vals), zip(grid[1:], vals[1:]), zip(grid[2:], vals[2:])
    ):
        if t3 - t1 <= 0:
            continue
        lam = (t2 - t1) / (t3 - t1)
        chord = (1.0 - lam) * v1 + lam * v3
        conv = max(conv, v2 - chord)
    mono = 0.0
    for d1, d2 in zip(ders, ders[1:]):
        mono = max(mono, d1 - d2)
    return CurveDiagnostics(curve.value(0.0), conv, mono, tol)
