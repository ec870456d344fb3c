"""Closed-form model backends producing dual curves and feedback policies.

Three one-dimensional market models are supported:

* :class:`BlackScholesModel` -- one stock with constant drift ``b`` and
  volatility ``sigma``.  Every dual quantity has an explicit formula; the
  dual curve is ``(b^2/2 sigma^2) * theta/(1-theta)``.
* :class:`LinearFactor1D` -- one stock whose drift is an affine function
  ``B1*Y + B0`` of a scalar Ornstein-Uhlenbeck factor ``Y`` with reversion
  ``K < 0``, driven by a two-dimensional Brownian motion.  The model is
  parameterized by the noise norms ``|sigma|``, ``|gamma|`` and the
  stock/factor correlation ``rho``.  The dual curve comes from a scalar
  algebraic Riccati equation whose two roots are explicit; only the minus
  root stabilizes the closed-loop factor drift and is ever used.
* :class:`PlatenRebolledo` -- log-price follows the OU factor itself; the
  special case ``B1 = K``, ``B0 = |gamma|^2/2``, ``gamma = sigma``,
  ``rho = 1``.  Rate functions and policies reduce to rational formulas.

All functions are pure; models are immutable dataclasses safe to share
across threads.  Model parameters ingest from JSON records with field
names exactly ``"b","sigma"`` (Black-Scholes), ``"K","sigma_norm"``
(Platen-Rebolledo) or ``"K","B1","B0","sigma_norm","gamma_norm","rho"``
(linear factor), see :func:`model_from_dict`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .duality import DualCurve, RateValue, Regime, Side
from .errors import DomainError, ErgodicityViolated, TargetOutOfRange

__all__ = [
    "BlackScholesModel",
    "LinearFactor1D",
    "PlatenRebolledo",
    "FeedbackPolicy",
    "GammaPrimeZero",
    "GammaPrimeMismatch",
    "bs_gamma",
    "bs_dual",
    "bs_policy",
    "bs_prob_exact",
    "lg1d_beta_thetabar",
    "lg1d_riccati_roots",
    "lg1d_D",
    "lg1d_gamma",
    "lg1d_gamma_curve",
    "lg1d_gamma_prime_zero",
    "lg1d_policy",
    "pr_bounds",
    "pr_tilt",
    "pr_rates",
    "dual_curve",
    "rate_for_target",
    "policy_at_tilt",
    "policy_for_target",
    "model_from_dict",
]


def _norm_sf(z: float) -> float:
    """Standard Gaussian upper tail probability."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


@dataclass(frozen=True)
class BlackScholesModel:
    """One stock, constant drift per unit time and volatility per sqrt(time)."""

    b: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class LinearFactor1D:
    """One stock driven by a scalar OU factor (norms-and-correlation form)."""

    K: float
    B1: float
    B0: float
    sigma_norm: float
    gamma_norm: float
    rho: float

    def __post_init__(self):
        if not self.K < 0:
            raise ValueError("K must be negative (stable factor reversion)")
        if not self.sigma_norm > 0:
            raise ValueError("sigma_norm must be positive")
        if not self.gamma_norm > 0:
            raise ValueError("gamma_norm must be positive")
        if abs(self.rho) > 1:
            raise ValueError("rho must lie in [-1, 1]")
        if self.B0 == 0:
            raise ValueError("B0 must be nonzero")


@dataclass(frozen=True)
class PlatenRebolledo:
    """Log-price follows an OU process with reversion K < 0 and noise norm |sigma|."""

    K: float
    sigma_norm: float

    def __post_init__(self):
        if not self.K < 0:
            raise ValueError("K must be negative")
        if not self.sigma_norm > 0:
            raise ValueError("sigma_norm must be positive")

    def as_linear_factor(self) -> LinearFactor1D:
        return LinearFactor1D(
            K=self.K,
            B1=self.K,
            B0=0.5 * self.sigma_norm**2,
            sigma_norm=self.sigma_norm,
            gamma_norm=self.sigma_norm,
            rho=1.0,
        )


ModelSpec = Union[BlackScholesModel, LinearFactor1D, PlatenRebolledo]


@dataclass(frozen=True, eq=False)
class FeedbackPolicy:
    """Affine feedback map y -> gain*y + intercept giving wealth fractions.

    ``gain`` and ``intercept`` are scalars for the one-dimensional models
    and arrays (d x m, d) for the multi-dimensional factor model.
    """

    gain: object
    intercept: object

    def as_arrays(self, d: int, m: int):
        gain = np.asarray(self.gain, dtype=float)
        intercept = np.asarray(self.intercept, dtype=float)
        gain = np.full((d, m), float(gain)) if gain.size == 1 else gain.reshape(d, m)
        intercept = (
            np.full(d, float(intercept)) if intercept.size == 1 else intercept.reshape(d)
        )
        if not (np.all(np.isfinite(gain)) and np.all(np.isfinite(intercept))):
            raise ValueError("policy coefficients must be finite")
        return gain, intercept


# ---------------------------------------------------------------------------
# Black-Scholes closed forms
# ---------------------------------------------------------------------------


def _bs_half_snr(model: BlackScholesModel) -> float:
    # b^2 / (2 sigma^2): the log-optimal long-run growth rate.
    return model.b**2 / (2.0 * model.sigma**2)


def bs_gamma(model: BlackScholesModel, theta: float, pi: float) -> float:
    """Long-run scaled log-Laplace value of a constant-fraction strategy.

    Gamma(theta, pi) = theta * [b*pi - (1-theta) * sigma^2 * pi^2 / 2].
    """
    return theta * (model.b * pi - (1.0 - theta) * model.sigma**2 * pi**2 / 2.0)


def bs_dual(model: BlackScholesModel, side: Side) -> DualCurve:
    """Analytic dual curve q*theta/(1-theta), q = b^2/(2 sigma^2).

    The upside curve lives on [0, 1) and is steep (derivative diverges at
    1); the downside curve lives on (-infinity, 0] with derivative limit 0.
    """
    q = _bs_half_snr(model)

    def evaluate(theta: float) -> float:
        return q * theta / (1.0 - theta)

    def deriv(theta: float) -> float:
        return q / (1.0 - theta) ** 2

    if side is Side.UPSIDE:
        return DualCurve(
            Side.UPSIDE,
            evaluate,
            deriv=deriv,
            theta_bar=1.0,
            deriv_at_zero=q,
            deriv_at_upper_limit=math.inf,
            steep=True,
            name="black-scholes-upside",
        )
    return DualCurve(
        Side.DOWNSIDE,
        evaluate,
        deriv=deriv,
        deriv_at_zero=q,
        deriv_at_lower_limit=0.0,
        name="black-scholes-downside",
    )


def bs_policy(model: BlackScholesModel, target: float, side: Side) -> FeedbackPolicy:
    """Optimal constant fraction for the given growth-rate target.

    Upside: the log-optimal (Merton) fraction b/sigma^2 below the free
    threshold, sqrt(2*target/sigma^2) above it.  Downside: 0 for negative
    targets (doing nothing keeps the growth rate at 0 exactly), otherwise
    sqrt(2*target/sigma^2) up to the threshold.
    """
    q = _bs_half_snr(model)
    ell = float(target)
    if side is Side.UPSIDE:
        pi = model.b / model.sigma**2 if ell <= q else math.sqrt(2.0 * ell / model.sigma**2)
    else:
        if ell > q:
            raise TargetOutOfRange(
                f"downside target {ell} above the derivative at zero {q}"
            )
        pi = 0.0 if ell < 0 else math.sqrt(2.0 * ell / model.sigma**2)
    return FeedbackPolicy(gain=0.0, intercept=pi)


def bs_prob_exact(
    model: BlackScholesModel, pi: float, target: float, horizon: float, side: Side
) -> float:
    """Exact finite-horizon tail probability of the average growth rate.

    Under a constant fraction pi the average growth rate is Gaussian with
    mean b*pi - sigma^2 pi^2/2 and variance sigma^2 pi^2 / T.  When pi = 0
    the law is degenerate at 0 and the result is the 0/1 indicator of the
    target against 0.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    ell = float(target)
    if pi == 0.0:
        if side is Side.UPSIDE:
            return 1.0 if ell <= 0.0 else 0.0
        return 1.0 if ell >= 0.0 else 0.0
    mean = model.b * pi - model.sigma**2 * pi**2 / 2.0
    sd = model.sigma * abs(pi) / math.sqrt(horizon)
    if side is Side.UPSIDE:
        return _norm_sf((ell - mean) / sd)
    return _norm_sf((mean - ell) / sd)


# ---------------------------------------------------------------------------
# Linear Gaussian factor model, scalar closed forms
# ---------------------------------------------------------------------------


def _lg1d_abar(model: LinearFactor1D) -> float:
    # |gamma| B1 / (K |sigma|), the loading-to-reversion ratio.
    return model.gamma_norm * model.B1 / (model.K * model.sigma_norm)


def lg1d_beta_thetabar(model: LinearFactor1D) -> tuple[float, float]:
    """Curvature constant beta and right domain endpoint theta_bar = min(1/beta, 1).

    beta = 1 - rho^2 + (rho - |gamma| B1 / (K |sigma|))^2 >= 0; beta = 0
    (perfect-correlation degenerate case) means 1/beta = +inf, so
    theta_bar = 1.
    """
    a = _lg1d_abar(model)
    beta = 1.0 - model.rho**2 + (model.rho - a) ** 2
    theta_bar = 1.0 if beta <= 1.0 else 1.0 / beta
    return beta, theta_bar


def _lg1d_discriminant(model: LinearFactor1D, theta: float) -> float:
    beta, theta_bar = lg1d_beta_thetabar(model)
    if theta >= 1.0:
        raise DomainError(f"theta={theta} must be below 1")
    disc = (1.0 - theta) * (1.0 - theta * beta)
    if disc < 0.0:
        if disc > -1e-12 * max(1.0, abs(theta)):
            return 0.0
        raise DomainError(
            f"theta={theta} beyond theta_bar={theta_bar}: negative discriminant"
        )
    return disc


def lg1d_riccati_roots(model: LinearFactor1D, theta: float) -> tuple[float, float]:
    """Both roots (C_minus, C_plus) of the scalar Riccati equation at theta.

    C_minus is the stabilizing (ergodic) root and the only one consumed by
    the other operations.
    """
    disc = _lg1d_discriminant(model, theta)
    a = _lg1d_abar(model)
    g2 = model.gamma_norm**2
    u = 1.0 - theta * (1.0 - model.rho * a)
    w = 1.0 - theta * (1.0 - model.rho**2)
    root = math.sqrt(disc)
    c_minus = -(model.K / g2) * (u - root) / w
    c_plus = -(model.K / g2) * (u + root) / w
    return c_minus, c_plus


def _lg1d_closed_loop_drift(model: LinearFactor1D, theta: float, c: float) -> float:
    # Drift coefficient of the closed-loop factor process, scaled by the
    # positive factor (1 - theta) and arranged as 1 - theta*(...) products
    # so deep negative tilts do not lose the sign to cancellation; must be
    # negative for the factor to remain ergodic under the tilted optimal
    # policy.
    a = _lg1d_abar(model)
    u = 1.0 - theta * (1.0 - model.rho * a)
    w = 1.0 - theta * (1.0 - model.rho**2)
    return model.K * u + model.gamma_norm**2 * w * c


def _lg1d_stabilizing_root(model: LinearFactor1D, theta: float) -> float:
    c_minus, _ = lg1d_riccati_roots(model, theta)
    _, theta_bar = lg1d_beta_thetabar(model)
    if theta < theta_bar - 1e-12 and theta != 0.0:
        if not _lg1d_closed_loop_drift(model, theta, c_minus) < 0.0:
            raise ErgodicityViolated(
                f"minus root fails the closed-loop stability check at theta={theta}"
            )
    return c_minus


def lg1d_D(model: LinearFactor1D, theta: float) -> float:
    """Linear coefficient D(theta) of the quadratic value; needs theta < theta_bar."""
    _, theta_bar = lg1d_beta_thetabar(model)
    if theta >= theta_bar:
        raise DomainError(f"D(theta) requires theta < theta_bar = {theta_bar}")
    disc = _lg1d_discriminant(model, theta)
    c = _lg1d_stabilizing_root(model, theta)
    return (
        -(model.B0 / (model.K * model.sigma_norm))
        * theta
        * (model.rho * model.gamma_norm * c + model.B1 / model.sigma_norm)
        / math.sqrt(disc)
    )


def lg1d_gamma(model: LinearFactor1D, theta: float) -> float:
    """Dual curve value Gamma(theta) assembled from the scalar Riccati solution."""
    if theta == 0.0:
        return 0.0
    c = _lg1d_stabilizing_root(model, theta)
    d = lg1d_D(model, theta)
    t1 = theta / (1.0 - theta)
    g = model.gamma_norm
    s = model.sigma_norm
    # 1 + t1*rho^2 written as (1 - theta(1-rho^2))/(1-theta): the naive form
    # cancels catastrophically for deep negative tilts
    w = 1.0 - theta * (1.0 - model.rho**2)
    return (
        0.5 * g**2 * c
        + 0.5 * g**2 * d**2 * w / (1.0 - theta)
        + t1 * (model.B0 / s) * model.rho * g * d
        + 0.5 * t1 * model.B0**2 / s**2
    )


def lg1d_gamma_curve(model: LinearFactor1D, side: Side) -> DualCurve:
    """Dual curve for the factor model, with finite-difference derivative.

    No closed form for Gamma' is used away from 0; the curve is smooth and
    steep at theta_bar, so the central difference with adaptive step is
    accurate wherever the conjugation engine probes it.
    """
    _, theta_bar = lg1d_beta_thetabar(model)

    def evaluate(theta: float) -> float:
        return lg1d_gamma(model, theta)

    # Derivative at zero by central difference of the closed-form value;
    # the formula spans both signs of theta, so no one-sided loss here.
    h = 1e-6
    d0 = (lg1d_gamma(model, h) - lg1d_gamma(model, -h)) / (2.0 * h)

    if side is Side.UPSIDE:
        return DualCurve(
            Side.UPSIDE,
            evaluate,
            theta_bar=theta_bar,
            deriv_at_zero=d0,
            deriv_at_upper_limit=math.inf,
            steep=True,
            name="linear-factor-upside",
        )
    return DualCurve(
        Side.DOWNSIDE,
        evaluate,
        deriv_at_zero=d0,
        name="linear-factor-downside",
    )


class GammaPrimeMismatch(UserWarning):
    """Numeric Gamma'(0) disagrees with the reference formula."""


@dataclass(frozen=True)
class GammaPrimeZero:
    """Gamma'(0) two ways: numeric derivative (binding) and reference formula.

    The reference formula B0^2/(2|sigma|^2) - B1^2 |gamma| / (4 |sigma|^2 K)
    carries a first-power |gamma| whose dimensions are suspect (the
    Platen-Rebolledo reduction requires |gamma|^2); the numeric derivative
    of the curve is authoritative and a mismatch beyond ``tol`` is flagged.
    """

    numeric: float
    reference: float
    tol: float = 1e-4

    @property
    def agree(self) -> bool:
        return abs(self.numeric - self.reference) <= self.tol


def lg1d_gamma_prime_zero(model: LinearFactor1D) -> GammaPrimeZero:
    """Gamma'(0) with a consistency diagnostic against the reference formula."""
    h = 1e-6
    numeric = (lg1d_gamma(model, h) - lg1d_gamma(model, -h)) / (2.0 * h)
    reference = model.B0**2 / (2.0 * model.sigma_norm**2) - (
        model.B1**2 * model.gamma_norm
    ) / (4.0 * model.sigma_norm**2 * model.K)
    out = GammaPrimeZero(numeric=numeric, reference=reference)
    if not out.agree:
        warnings.warn(
            f"Gamma'(0): numeric {numeric:.8g} vs reference formula {reference:.8g}; "
            "using the numeric value",
            GammaPrimeMismatch,
            stacklevel=2,
        )
    return out


def lg1d_policy(model: LinearFactor1D, theta: float) -> FeedbackPolicy:
    """Optimal affine feedback fraction pi(y) at risk-sensitivity theta."""
    _, theta_bar = lg1d_beta_thetabar(model)
    if theta >= theta_bar:
        raise DomainError(f"policy requires theta < theta_bar = {theta_bar}")
    c = _lg1d_stabilizing_root(model, theta)
    d = lg1d_D(model, theta)
    s = model.sigma_norm
    g = model.gamma_norm
    scale = 1.0 / ((1.0 - theta) * s)
    gain = scale * (model.B1 / s + model.rho * g * c)
    intercept = scale * (model.B0 / s + model.rho * g * d)
    return FeedbackPolicy(gain=gain, intercept=intercept)


# ---------------------------------------------------------------------------
# Platen-Rebolledo rational closed forms
# ---------------------------------------------------------------------------


def pr_bounds(model: PlatenRebolledo) -> tuple[float, float]:
    """(ell_lower, ell_upper): derivative limits at -inf and 0 of the dual curve.

    ell_lower = |sigma|^2/8 and ell_upper = |K|/4 + |sigma|^2/8.
    """
    ell_lower = model.sigma_norm**2 / 8.0
    return ell_lower, abs(model.K) / 4.0 + ell_lower


def pr_tilt(model: PlatenRebolledo, target: float) -> float:
    """Tilt theta(target) = 1 - ((ell_upper-ell_lower)/(target-ell_lower))^2."""
    ell_lower, ell_upper = pr_bounds(model)
    if not target > ell_lower:
        raise TargetOutOfRange(f"target {target} must exceed ell_lower={ell_lower}")
    return 1.0 - ((ell_upper - ell_lower) / (target - ell_lower)) ** 2


def pr_rates(model: PlatenRebolledo, target: float, side: Side) -> RateValue:
    """Closed-form decay rates for the Platen-Rebolledo model.

    Upside: 0 for targets at or below ell_upper, else
    -(l-ell_upper)^2 / (l-ell_upper+|K|/4).  Downside: minus infinity at or
    below ell_lower, else -(l-ell_upper)^2 / (l-ell_lower) up to ell_upper
    (the value vanishes at the ell_upper boundary, tilt 0).
    """
    ell = float(target)
    ell_lower, ell_upper = pr_bounds(model)
    if side is Side.UPSIDE:
        if ell <= ell_upper:
            return RateValue.free()
        value = -((ell - ell_upper) ** 2) / (ell - ell_upper + abs(model.K) / 4.0)
        return RateValue.interior(value, pr_tilt(model, ell))
    if ell > ell_upper:
        raise TargetOutOfRange(
            f"downside target {ell} above the derivative at zero {ell_upper}"
        )
    if ell <= ell_lower:
        return RateValue.unreachable()
    value = -((ell - ell_upper) ** 2) / (ell - ell_lower)
    return RateValue.interior(value, pr_tilt(model, ell))


# ---------------------------------------------------------------------------
# Uniform dispatch helpers
# ---------------------------------------------------------------------------


def dual_curve(model: ModelSpec, side: Side) -> DualCurve:
    """The model's dual curve on the requested side."""
    if isinstance(model, BlackScholesModel):
        return bs_dual(model, side)
    if isinstance(model, PlatenRebolledo):
        return lg1d_gamma_curve(model.as_linear_factor(), side)
    if isinstance(model, LinearFactor1D):
        return lg1d_gamma_curve(model, side)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def rate_for_target(model: ModelSpec, target: float, side: Side) -> RateValue:
    """Decay rate by the fastest available route (closed form, else engine)."""
    from . import duality

    if isinstance(model, PlatenRebolledo):
        return pr_rates(model, target, side)
    curve = dual_curve(model, side)
    if side is Side.UPSIDE:
        return duality.conjugate_upside(curve, target)
    return duality.conjugate_downside(curve, target)


def policy_at_tilt(model: ModelSpec, theta: float) -> FeedbackPolicy:
    """Optimal policy of the risk-sensitive dual problem at tilt theta."""
    if isinstance(model, BlackScholesModel):
        if theta >= 1.0:
            raise DomainError(f"theta={theta} must be below 1")
        return FeedbackPolicy(gain=0.0, intercept=model.b / (model.sigma**2 * (1.0 - theta)))
    lf = model.as_linear_factor() if isinstance(model, PlatenRebolledo) else model
    return lg1d_policy(lf, theta)


def policy_for_target(
    model: ModelSpec,
    target: float,
    side: Side,
    rate: Optional[RateValue] = None,
) -> FeedbackPolicy:
    """Feedback policy matched to a target's rate regime.

    Interior targets use the policy at the optimal tilt; free-regime
    targets use the tilt-zero (log-optimal) policy, the limit of the
    nearly optimal sequence; unreachable downside targets map to the
    all-cash policy.
    """
    if isinstance(model, BlackScholesModel):
        return bs_policy(model, target, side)
    lf = model.as_linear_factor() if isinstance(model, PlatenRebolledo) else model
    if rate is None:
        rate = rate_for_target(model, target, side)
    if rate.regime is Regime.UNREACHABLE:
        return FeedbackPolicy(gain=0.0, intercept=0.0)
    theta = rate.tilt if rate.regime is Regime.INTERIOR else 0.0
    return lg1d_policy(lf, theta)


_BS_FIELDS = {"b", "sigma"}
_PR_FIELDS = {"K", "sigma_norm"}
_LG_FIELDS = {"K", "B1", "B0", "sigma_norm", "gamma_norm", "rho"}


def model_from_dict(record: dict) -> ModelSpec:
    """Build a model from a JSON configuration record.

    The field set determines the model type: {"b","sigma"} is
    Black-Scholes, {"K","sigma_norm"} is Platen-Rebolledo, and the full
    six-field set is the linear factor model.
    """
    keys = set(record)
    if keys == _BS_FIELDS:
        return BlackScholesModel(b=float(record["b"]), sigma=float(record["sigma"]))
    if keys == _PR_FIELDS:
        return PlatenRebolledo(
            K=float(record["K"]), sigma_norm=float(record["sigma_norm"])
        )
    if keys == _LG_FIELDS:
        return LinearFactor1D(
            K=float(record["K"]),
            B1=float(record["B1"]),
            B0=float(record["B0"]),
            sigma_norm=float(record["sigma_norm"]),
            gamma_norm=float(record["gamma_norm"]),
            rho=float(record["rho"]),
        )
    raise ValueError(
        "unrecognized model record: expected fields "
        '{"b","sigma"} | {"K","sigma_norm"} | '
        '{"K","B1","B0","sigma_norm","gamma_norm","rho"}, got '
        f"{sorted(keys)}"
    )
