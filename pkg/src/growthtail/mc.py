"""Monte-Carlo verification engine for growth-rate tail probabilities.

Simulates the joint log-wealth / factor dynamics

    dL = (pi'b(Y) - 1/2 pi' ss' pi) dt + pi's dW,
    dY = K Y dt + g dW,

under an affine feedback policy pi(y) = G y + g0, with a shared Brownian
motion of dimension d+m, by Euler-Maruyama directly on L (wealth is never
exponentiated, so paths cannot overflow through positivity).  The
Black-Scholes case is the empty-factor specialization and its log-wealth
scheme is exact in distribution at any step size.

Estimators
----------
* direct tail frequency with binomial standard errors,
* finite-horizon scaled log-Laplace values with delta-method errors,
* an exponential-tilting importance sampler: paths are simulated under a
  Girsanov shift of the Brownian increments and reweighted by the exact
  accumulated change-of-measure density, self-normalized so that the
  unknown log-Laplace normalizer cancels.  The shift combines the
  risk-sensitivity tilt of the strategy noise with the gradient of the
  model's quadratic value, which keeps the tilted factor process ergodic
  for every tilt; for Black-Scholes the weights reduce pathwise to
  exp(-theta * L_T) and the estimator coincides with the textbook tilted
  scheme.  Because the per-step reweighting is the exact density ratio of
  the two Euler chains, the estimator is unbiased at the discretization
  level for any shift.

Reproducibility
---------------
All noise comes from counter-based Philox streams keyed by
(seed, substream, step index); path i always reads column block i of a
step's block, so results are bit-identical for a fixed path count no
matter how path batches are scheduled.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from . import riccati as _riccati
from .duality import Side
from .errors import NumericalBlowup, WeightDegeneracy
from .models import (
    BlackScholesModel,
    FeedbackPolicy,
    LinearFactor1D,
    PlatenRebolledo,
    lg1d_D,
    lg1d_riccati_roots,
)
from .riccati import LinearFactorMD

__all__ = [
    "Scheme",
    "Direct",
    "TiltedSelfNormalized",
    "SimConfig",
    "PathSample",
    "SimResult",
    "RateFitRow",
    "RateFitResult",
    "simulate_paths",
    "estimate_prob",
    "estimate_log_laplace",
    "tilted_estimate_prob",
    "rate_fit",
    "empirical_chebyshev_check",
]

_ESS_FLOOR = 0.01
_BLOWUP_CHECK_INTERVAL = 64

SimulatableModel = Union[BlackScholesModel, LinearFactor1D, PlatenRebolledo, LinearFactorMD]


class Scheme(enum.Enum):
    EULER_LOG_WEALTH = "euler-log-wealth"


@dataclass(frozen=True)
class Direct:
    """Plain empirical-frequency estimator."""


@dataclass(frozen=True)
class TiltedSelfNormalized:
    """Exponentially tilted self-normalized importance-sampling estimator."""

    theta_tilt: float


EstimatorSpec = Union[Direct, TiltedSelfNormalized]


@dataclass(frozen=True)
class SimConfig:
    """Simulation run parameters."""

    horizon: float
    dt: float
    n_paths: int
    seed: int
    scheme: Scheme = Scheme.EULER_LOG_WEALTH
    estimator: EstimatorSpec = Direct()

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not 0 < self.dt <= self.horizon:
            raise ValueError("dt must lie in (0, horizon]")
        if self.n_paths < 2:
            raise ValueError("n_paths must be at least 2")

    def steps(self) -> list[float]:
        """Step sizes: horizon/dt full steps plus a shortened last step."""
        n_full = int(math.floor(self.horizon / self.dt + 1e-9))
        rem = self.horizon - n_full * self.dt
        out = [self.dt] * n_full
        if rem > 1e-12 * self.dt:
            out.append(rem)
        return out


@dataclass(frozen=True, eq=False)
class PathSample:
    """Terminal samples (L_T, Y_T) of one simulation run."""

    L: np.ndarray
    Y: np.ndarray
    horizon: float
    f_integral: Optional[np.ndarray] = None

    @property
    def n_paths(self) -> int:
        return self.L.shape[0]


@dataclass(frozen=True)
class SimResult:
    """Point estimate with standard error and diagnostics."""

    estimate: float
    std_error: float
    n_paths: int
    log_estimate: Optional[float] = None
    extras: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# model -> simulation arrays
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _SimArrays:
    K: np.ndarray       # (m, m)
    B1: np.ndarray      # (d, m)
    B0: np.ndarray      # (d,)
    sigma: np.ndarray   # (d, q)
    gamma: np.ndarray   # (m, q)

    @property
    def dims(self):
        d, q = self.sigma.shape
        return d, self.K.shape[0], q


def _sim_arrays(model: SimulatableModel) -> _SimArrays:
    if isinstance(model, BlackScholesModel):
        return _SimArrays(
            K=np.zeros((0, 0)),
            B1=np.zeros((1, 0)),
            B0=np.array([model.b]),
            sigma=np.array([[model.sigma]]),
            gamma=np.zeros((0, 1)),
        )
    if isinstance(model, PlatenRebolledo):
        model = model.as_linear_factor()
    if isinstance(model, LinearFactor1D):
        s, g, rho = model.sigma_norm, model.gamma_norm, model.rho
        return _SimArrays(
            K=np.array([[model.K]]),
            B1=np.array([[model.B1]]),
            B0=np.array([model.B0]),
            sigma=np.array([[s, 0.0]]),
            gamma=np.array([[rho * g, math.sqrt(max(0.0, 1.0 - rho**2)) * g]]),
        )
    if isinstance(model, LinearFactorMD):
        return _SimArrays(K=model.K, B1=model.B1, B0=model.B0, sigma=model.sigma, gamma=model.gamma)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def _quadratic_pair(model: SimulatableModel, theta: float):
    """(C, D) of the model's quadratic value at theta (empty for Black-Scholes)."""
    if isinstance(model, BlackScholesModel):
        return np.zeros((0, 0)), np.zeros(0)
    if isinstance(model, PlatenRebolledo):
        model = model.as_linear_factor()
    if isinstance(model, LinearFactor1D):
        if theta == 0.0:
            return np.zeros((1, 1)), np.zeros(1)
        c = lg1d_riccati_roots(model, theta)[0]
        d = lg1d_D(model, theta)
        return np.array([[c]]), np.array([d])
    qv = _riccati.solve_care(model, theta)
    return qv.C, qv.D


# ---------------------------------------------------------------------------
# core stepper
# ---------------------------------------------------------------------------


def _step_normals(seed: int, substream: int, step: int, out: np.ndarray) -> None:
    key = np.array(
        [np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(((substream & 0xFFFFFFFF) << 32) | step)],
        dtype=np.uint64,
    )
    gen = np.random.Generator(np.random.Philox(key=key))
    gen.standard_normal(out=out)


def _run_paths(
    arrays: _SimArrays,
    gain: np.ndarray,
    intercept: np.ndarray,
    cfg: SimConfig,
    theta_tilt: Optional[float] = None,
    CD=None,
    substream: int = 0,
    record_f_theta: Optional[float] = None,
):
    d, m, q = arrays.dims
    n = cfg.n_paths
    steps = cfg.steps()
    L = np.zeros(n)
    Y = np.zeros((n, m))
    logw = np.zeros(n)
    f_int = np.zeros(n) if record_f_theta is not None else None
    if theta_tilt is not None:
        C, D = CD if CD is not None else (np.zeros((m, m)), np.zeros(m))
    buf = np.empty((n, q))
    t = 0.0
    for k, h in enumerate(steps):
        pi = Y @ gain.T + intercept                       # (n, d)
        A = pi @ arrays.sigma                             # (n, q), rows sigma'pi
        drift_b = Y @ arrays.B1.T + arrays.B0             # (n, d)
        pi_b = np.einsum("ij,ij->i", pi, drift_b)
        quad = np.einsum("ij,ij->i", A, A)                # pi' ss' pi
        _step_normals(cfg.seed, substream, k, buf)
        dW = buf * math.sqrt(h)
        if theta_tilt is not None:
            H = theta_tilt * A + (Y @ C.T + D) @ arrays.gamma
            logw -= np.einsum("ij,ij->i", H, dW) + 0.5 * np.einsum("ij,ij->i", H, H) * h
            dW = dW + H * h
        L += (pi_b - 0.5 * quad) * h + np.einsum("ij,ij->i", A, dW)
        if m:
            Y += (Y @ arrays.K.T) * h + dW @ arrays.gamma.T
        if f_int is not None:
            f_int += (pi_b - 0.5 * (1.0 - record_f_theta) * quad) * h
        t += h
        if (k + 1) % _BLOWUP_CHECK_INTERVAL == 0 or k + 1 == len(steps):
            bad = ~np.isfinite(L)
            if m:
                bad |= ~np.isfinite(Y).all(axis=1)
            if bad.any():
                idx = int(np.argmax(bad))
                raise NumericalBlowup(
                    f"non-finite state on path {idx} near t={t:.6g}",
                    path_index=idx,
                    time=t,
                )
    return L, Y, logw, f_int


def simulate_paths(
    model: SimulatableModel,
    policy: FeedbackPolicy,
    cfg: SimConfig,
    substream: int = 0,
    record_f_theta: Optional[float] = None,
) -> PathSample:
    """Terminal samples of (L_T, Y_T) under the model's own dynamics.

    Deterministic given (model, policy, cfg): noise is read from
    counter-based per-step substreams.  ``record_f_theta`` additionally
    accumulates the running integral of the tilted growth integrand
    f(theta, y, pi) = pi'b(y) - (1-theta)/2 pi'ss'pi along each path.
    """
    arrays = _sim_arrays(model)
    d, m, _ = arrays.dims
    gain, intercept = policy.as_arrays(d, m)
    L, Y, _, f_int = _run_paths(
        arrays, gain, intercept, cfg, substream=substream, record_f_theta=record_f_theta
    )
    return PathSample(L=L, Y=Y, horizon=cfg.horizon, f_integral=f_int)


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------


def _tail_indicator(sample: PathSample, target: float, side: Side) -> np.ndarray:
    cutoff = float(target) * sample.horizon
    if side is Side.UPSIDE:
        return sample.L >= cutoff
    return sample.L <= cutoff


def estimate_prob(sample: PathSample, target: float, side: Side) -> SimResult:
    """Empirical tail frequency with a binomial standard error.

    A zero-hit outcome is flagged (``extras["zero_hits"]``) rather than
    raised; the flag suggests rerunning with the tilted estimator at the
    conjugate tilt of the target.
    """
    ind = _tail_indicator(sample, target, side)
    n = sample.n_paths
    hits = int(ind.sum())
    p = hits / n
    se = math.sqrt(p * (1.0 - p) / n)
    extras = {"hits": hits}
    if hits == 0:
        extras["zero_hits"] = True
        extras["suggestion"] = "no hits: rerun with the tilted estimator at the conjugate tilt"
    return SimResult(
        estimate=p,
        std_error=se,
        n_paths=n,
        log_estimate=math.log(p) if p > 0 else None,
        extras=extras,
    )


def _ess(weights: np.ndarray) -> float:
    s = weights.sum()
    return float(s * s / np.sum(weights * weights))


def estimate_log_laplace(sample: PathSample, theta: float) -> SimResult:
    """Scaled log-Laplace estimate (1/T) log mean(exp(theta L_T)).

    Standard error by the delta method; the effective sample size of the
    exponential weights is reported and a collapse below 1% of the path
    count raises WeightDegeneracy.
    """
    T = sample.horizon
    a = theta * sample.L
    amax = float(a.max())
    w = np.exp(a - amax)
    n = sample.n_paths
    mean_w = float(w.mean())
    est = (amax + math.log(mean_w)) / T
    se = float(w.std(ddof=1)) / (math.sqrt(n) * mean_w * T)
    ess = _ess(w)
    if ess < _ESS_FLOOR * n:
        raise WeightDegeneracy(
            f"exponential-weight ESS {ess:.1f} below {_ESS_FLOOR:.0%} of {n} paths"
        )
    return SimResult(
        estimate=est,
        std_error=se,
        n_paths=n,
        log_estimate=None,
        extras={"ess": ess, "theta": float(theta)},
    )


def tilted_estimate_prob(
    model: SimulatableModel,
    policy: FeedbackPolicy,
    theta_tilt: float,
    target: float,
    side: Side,
    cfg: SimConfig,
    substream: int = 0,
) -> SimResult:
    """Tail probability by exponential-tilting importance sampling.

    The Brownian increments are shifted by h_t = theta*s'pi_t + g'grad
    phi(Y_t) (phi the model's quadratic value at the tilt), which centers
    the tilted dynamics on the target event while keeping the factor
    ergodic, and every path carries its exact accumulated log density
    ratio.  The self-normalized ratio estimator

        P[A] ~= sum(w 1_A) / sum(w),   w = exp(accumulated log-weight)

    cancels the unknown normalizing constant; for Black-Scholes w is
    pathwise proportional to exp(-theta L_T).  Standard error by the
    delta method for ratio estimators.  theta_tilt = 0 reproduces the
    direct estimator path-for-path.
    """
    theta_tilt = float(theta_tilt)
    if side is Side.UPSIDE and theta_tilt < 0:
        raise ValueError("upside tilting requires theta_tilt >= 0")
    if side is Side.DOWNSIDE and theta_tilt > 0:
        raise ValueError("downside tilting requires theta_tilt <= 0")
    arrays = _sim_arrays(model)
    d, m, _ = arrays.dims
    gain, intercept = policy.as_arrays(d, m)
    CD = _quadratic_pair(model, theta_tilt)
    L, Y, logw, _ = _run_paths(
        arrays, gain, intercept, cfg, theta_tilt=theta_tilt, CD=CD, substream=substream
    )
    sample = PathSample(L=L, Y=Y, horizon=cfg.horizon)
    ind = _tail_indicator(sample, target, side).astype(float)
    w = np.exp(logw - logw.max())
    wsum = float(w.sum())
    p = float(w @ ind) / wsum
    se = float(np.sqrt(np.sum((w * (ind - p)) ** 2))) / wsum
    n = cfg.n_paths
    ess = _ess(w)
    if ess < _ESS_FLOOR * n:
        raise WeightDegeneracy(
            f"tilted-weight ESS {ess:.1f} below {_ESS_FLOOR:.0%} of {n} paths"
        )
    return SimResult(
        estimate=p,
        std_error=se,
        n_paths=n,
        log_estimate=math.log(p) if p > 0 else None,
        extras={"ess": ess, "theta_tilt": theta_tilt},
    )


@dataclass(frozen=True)
class RateFitRow:
    horizon: float
    result: SimResult


@dataclass(frozen=True)
class RateFitResult:
    """Least-squares decay-rate fit of log tail probabilities against horizon."""

    slope: float
    intercept: float
    rows: list

    def log_probs(self):
        return [
            (row.horizon, row.result.log_estimate)
            for row in self.rows
            if row.result.log_estimate is not None
        ]


def rate_fit(
    model: SimulatableModel,
    policy: FeedbackPolicy,
    target: float,
    side: Side,
    horizons: Sequence[float],
    cfg: SimConfig,
    theta_tilt: Optional[float] = None,
) -> RateFitResult:
    """Estimate the exponential decay rate of the tail probability in T.

    Runs one estimate per horizon (independent substreams) and fits
    log P(T) ~ intercept + slope * T by least squares.  When a tilt is
    available (argument, or a tilted estimator in the config) the tilted
    estimator is used throughout -- small probabilities at the longer
    horizons would otherwise return zero hits.
    """
    if len(horizons) < 3:
        raise ValueError("need at least 3 horizons for a decay-rate fit")
    if theta_tilt is None and isinstance(cfg.estimator, TiltedSelfNormalized):
        theta_tilt = cfg.estimator.theta_tilt
    rows = []
    for k, T in enumerate(horizons):
        cfg_T = replace(cfg, horizon=float(T))
        if theta_tilt is not None:
            res = tilted_estimate_prob(
                model, policy, theta_tilt, target, side, cfg_T, substream=k
            )
        else:
            sample = simulate_paths(model, policy, cfg_T, substream=k)
            res = estimate_prob(sample, target, side)
        rows.append(RateFitRow(horizon=float(T), result=res))
    pts = [(T, lp) for T, lp in ((r.horizon, r.result.log_estimate) for r in rows) if lp is not None]
    if len(pts) < 2:
        raise WeightDegeneracy(
            "fewer than 2 horizons produced a positive estimate; "
            "rerun with a tilted estimator"
        )
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    xc = x - x.mean()
    slope = float(xc @ (y - y.mean()) / (xc @ xc))
    intercept = float(y.mean() - slope * x.mean())
    return RateFitResult(slope=slope, intercept=intercept, rows=rows)


def empirical_chebyshev_check(
    sample: PathSample,
    theta: float,
    target: float,
    weights: Optional[np.ndarray] = None,
) -> bool:
    """Exponential Markov bound under the empirical measure (upside, theta >= 0).

    Checks mean(1{L_T >= l T}) <= exp(-theta l T) mean(exp(theta L_T)).
    The bound holds pointwise for every sample set, so a False return can
    only signal an implementation error (or deliberately corrupted
    ``weights``, the hook used by the negative-control test).
    """
    if theta < 0:
        raise ValueError("the upside Markov bound requires theta >= 0")
    cutoff = float(target) * sample.horizon
    lhs = float(np.mean(sample.L >= cutoff))
    if weights is not None:
        rhs = math.exp(-theta * cutoff) * float(np.mean(weights))
        return lhs <= rhs * (1.0 + 1e-12)
    if lhs == 0.0:
        return True
    a = theta * sample.L
    amax = float(a.max())
    log_rhs = -theta * cutoff + amax + math.log(float(np.mean(np.exp(a - amax))))
    return math.log(lhs) <= log_rhs + 1e-12
