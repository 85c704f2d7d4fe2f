"""Large-deviations decay rates and rare-event importance sampling.

Tail probabilities P(M^(N)(t)/N >= a), a above the fluid value
rho(t) = E[L](1 - e^(-mu t))/mu, decay at a regime-dependent speed:

* fast (alpha > 1): speed N, Poisson (Cramer) rate
  a log(rho(t)/a) - rho(t) + a;
* slow (alpha < 1) with the rate-reachable ceiling u(t) = y(1-e^(-mu t))/mu
  (y the essential supremum) at or above a: speed N^alpha/Delta, rate
  -sup_{theta>0} (theta a - int_0^t log M(theta e^(-mu s)) ds);
* slow with u(t) < a: speed N, Poisson rate at mean u(t);
* intermediate (alpha = 1): speed N/Delta, the same Legendre form with
  argument Delta (e^(theta/Delta) - 1) e^(-mu s).

The integrated log-MGF is evaluated by adaptive quadrature two ways (direct
in s, and via u = theta e^(-mu s)), cross-checked in tests.  Suprema are
located by bracketed root finding on the derivative (strict concavity), with
the stationarity residual reported.  Multivariate rectangle queries use the
limiting log-MGFs of the coupled model and a projected quasi-Newton search.

The importance-sampling estimator draws slot rates from the exponentially
twisted law with per-slot tilt theta* e^(-mu j Delta_N) and weighs the
indicator of the discretized parameter k_t by the likelihood ratio
prod_j M(eta_j) e^(-eta_j L_j), accumulated in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, minimize
from scipy.special import logsumexp

from .env import EnvSpec, ScalingRegime
from .errors import (
    ConvergenceError,
    DegenerateQuery,
    DomainError,
    RegimeError,
    UnsupportedFamily,
)

__all__ = [
    "RateQuery",
    "RateResult",
    "integrated_log_mgf",
    "rate_fast",
    "rate_slow",
    "rate_slow_bounded",
    "rate_intermediate",
    "classify_regime",
    "is_estimate_tail",
    "rate_multivariate",
    "speed_value",
]

_QUAD_KW = dict(epsabs=1e-12, epsrel=1e-12, limit=400)

SPEED_N = "N"
SPEED_SLOW = "N^alpha/Delta"
SPEED_INTERMEDIATE = "N/Delta"


@dataclass(frozen=True)
class RateQuery:
    """Tail query: P(queue length / N >= a) at time t under (delta, alpha) scaling.

    mu and a are scalars for the univariate operations; rate_multivariate
    accepts tuples (rectangle upper sets prod_i [a_i, inf))."""

    env: EnvSpec
    mu: float | tuple[float, ...]
    delta: float
    alpha: float
    t: float
    a: float | tuple[float, ...]

    def __post_init__(self):
        if self.t <= 0:
            raise ValueError("t must be positive")
        if self.delta <= 0:
            raise ValueError("delta must be positive")

    @property
    def rho_t(self) -> float:
        """Fluid value at t from an empty start (univariate)."""
        return self.env.mean * (-math.expm1(-self._scalar_mu * self.t)) / self._scalar_mu

    @property
    def u_t(self) -> float:
        """Reachable rate ceiling y (1 - e^(-mu t))/mu, +inf for unbounded env."""
        y = self.env.essential_sup()
        if math.isinf(y):
            return math.inf
        return y * (-math.expm1(-self._scalar_mu * self.t)) / self._scalar_mu

    @property
    def _scalar_mu(self) -> float:
        if isinstance(self.mu, (tuple, list)):
            raise ValueError("this operation requires a scalar service rate")
        return float(self.mu)

    @property
    def _scalar_a(self) -> float:
        if isinstance(self.a, (tuple, list)):
            raise ValueError("this operation requires a scalar tail level")
        return float(self.a)


@dataclass
class RateResult:
    """Decay-rate value (<= 0), optimizer, regime, speed, and diagnostics."""

    rate: float
    theta_star: float | np.ndarray
    regime: str
    speed: str
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        theta = self.theta_star
        if isinstance(theta, np.ndarray):
            theta = theta.tolist()
        return {
            "schema": "coxq-rate/1",
            "rate": self.rate,
            "theta_star": theta,
            "regime": self.regime,
            "speed": self.speed,
            "diagnostics": {k: float(v) if np.isscalar(v) else v for k, v in self.diagnostics.items()},
        }


def speed_value(speed: str, scaling: ScalingRegime) -> float:
    """The normalizing sequence at finite N: log P ~ speed_value * rate."""
    if speed == SPEED_N:
        return float(scaling.N)
    if speed == SPEED_SLOW:
        return scaling.N**scaling.alpha / scaling.delta
    if speed == SPEED_INTERMEDIATE:
        return scaling.N / scaling.delta
    raise ValueError(f"unknown speed {speed!r}")


# ---------------------------------------------------------------------------
# Integrated log-MGF and its theta-derivative.


def integrated_log_mgf(
    env: EnvSpec, mu: float, t: float, theta: float, route: str = "time"
) -> float:
    """int_0^t log M(theta e^(-mu s)) ds by adaptive quadrature.

    route="time" integrates in s directly; route="substitution" uses
    u = theta e^(-mu s), giving (1/mu) int_{theta e^(-mu t)}^{theta} log M(u)/u du.
    """
    val, _ = _ilm_with_err(env, mu, t, theta, route)
    return val


def _ilm_with_err(env, mu, t, theta, route="time"):
    if theta == 0.0:
        return 0.0, 0.0
    if theta > 0:
        env.log_mgf(theta)  # probe: raises DomainError outside the domain
    if route == "time":
        return quad(lambda s: env.log_mgf(theta * math.exp(-mu * s)), 0.0, t, **_QUAD_KW)
    if route == "substitution":
        val, err = quad(
            lambda u: env.log_mgf(u) / u, theta * math.exp(-mu * t), theta, **_QUAD_KW
        )
        return val / mu, err / mu
    raise ValueError(f"unknown route {route!r}")


def _ilm_prime(env, mu, t, theta):
    """d/dtheta int_0^t log M(theta e^(-mu s)) ds."""
    if theta == 0.0:
        return env.mean * (-math.expm1(-mu * t)) / mu
    val, _ = quad(
        lambda s: math.exp(-mu * s) * env.log_mgf_prime(theta * math.exp(-mu * s)),
        0.0,
        t,
        **_QUAD_KW,
    )
    return val


# ---------------------------------------------------------------------------
# Univariate rates.


def rate_fast(rho_t: float, a: float) -> RateResult:
    """Fast regime (alpha > 1): Poisson tail at mean rho(t), speed N."""
    if not 0 < rho_t < a:
        raise DomainError(f"need a > rho(t) > 0, got a={a}, rho(t)={rho_t}")
    rate = a * math.log(rho_t / a) - rho_t + a
    return RateResult(
        rate=rate,
        theta_star=math.log(a / rho_t),
        regime="fast",
        speed=SPEED_N,
        diagnostics={"closed_form": 1.0},
    )


def _bracketed_argmax(deriv, hi_domain: float):
    """Argmax of a strictly concave objective with derivative ``deriv`` on (0, hi).

    Returns (theta_star, iterations).  A non-positive derivative at 0+ means the
    supremum sits at the boundary theta -> 0 (rate 0)."""
    lo = 1e-12
    if deriv(lo) <= 0:
        return lo, 0
    if math.isfinite(hi_domain):
        hi = None
        pad = 1e-6
        while pad >= 1e-11:
            cand = hi_domain * (1.0 - pad)
            if deriv(cand) < 0:
                hi = cand
                break
            pad *= 0.1
        if hi is None:
            raise ConvergenceError(
                "no interior stationary point resolvable before the MGF domain "
                "boundary; the tail level is too deep for this family"
            )
    else:
        hi = 1.0
        for _ in range(200):
            if deriv(hi) < 0:
                break
            hi *= 2.0
        else:
            raise ConvergenceError("derivative never changes sign; supremum diverges")
    theta, info = brentq(deriv, lo, hi, xtol=1e-13, rtol=8.9e-16, maxiter=200, full_output=True)
    return theta, info.iterations


def rate_slow(query: RateQuery) -> RateResult:
    """Slow regime (alpha < 1), rate-reachable branch: speed N^alpha/Delta.

    rate = -sup_{theta>0} (theta a - int_0^t log M(theta e^(-mu s)) ds).
    """
    mu, a, t, env = query._scalar_mu, query._scalar_a, query.t, query.env
    rho = query.rho_t
    if a <= rho:
        raise DomainError(f"need a > rho(t) = {rho}")
    if query.u_t < a:
        raise RegimeError(
            f"u(t) = {query.u_t} < a = {a}: the rate cannot reach a; "
            "use rate_slow_bounded"
        )
    deriv = lambda th: a - _ilm_prime(env, mu, t, th)
    theta, iters = _bracketed_argmax(deriv, env.theta_max)
    val, quad_err = _ilm_with_err(env, mu, t, theta)
    residual = abs(a - _ilm_prime(env, mu, t, theta))
    if residual > 1e-8:
        raise ConvergenceError(f"stationarity residual {residual:.2e} > 1e-8")
    return RateResult(
        rate=min(0.0, -(theta * a - val)),
        theta_star=theta,
        regime="slow_unbounded",
        speed=SPEED_SLOW,
        diagnostics={
            "stationarity_residual": residual,
            "iterations": iters,
            "quad_abserr": quad_err,
        },
    )


def rate_slow_bounded(query: RateQuery) -> RateResult:
    """Slow regime with u(t) < a: Poisson tail at mean u(t), speed N."""
    mu, a = query._scalar_mu, query._scalar_a
    if a <= query.rho_t:
        raise DomainError(f"need a > rho(t) = {query.rho_t}")
    y = query.env.essential_sup()
    if math.isinf(y):
        raise UnsupportedFamily(
            "rate_slow_bounded needs a finite essential supremum "
            "(Deterministic or DiscreteFinite rate)"
        )
    u = query.u_t
    if u >= a:
        raise RegimeError(f"u(t) = {u} >= a = {a}: use rate_slow")
    rate = a * math.log(u / a) + a - u
    return RateResult(
        rate=rate,
        theta_star=math.log(a / u),
        regime="slow_bounded",
        speed=SPEED_N,
        diagnostics={"closed_form": 1.0, "u_t": u},
    )


def rate_intermediate(query: RateQuery) -> RateResult:
    """Intermediate regime (alpha = 1): speed N/Delta.

    rate = -sup_{theta>0}(theta a - int_0^t log M(Delta (e^(theta/Delta)-1) e^(-mu s)) ds).
    """
    mu, a, t, env, delta = query._scalar_mu, query._scalar_a, query.t, query.env, query.delta
    rho = query.rho_t
    if a <= rho:
        raise DomainError(f"need a > rho(t) = {rho}")

    def arg(theta, s):
        return delta * math.expm1(theta / delta) * math.exp(-mu * s)

    def objective_integral(theta):
        return quad(lambda s: env.log_mgf(arg(theta, s)), 0.0, t, **_QUAD_KW)

    def deriv(theta):
        scale = math.exp(theta / delta)  # d(arg)/dtheta at s=0 over e^{-mu s}
        val, _ = quad(
            lambda s: env.log_mgf_prime(arg(theta, s)) * scale * math.exp(-mu * s),
            0.0,
            t,
            **_QUAD_KW,
        )
        return a - val

    if math.isfinite(env.theta_max):
        # Delta (e^(theta/Delta) - 1) < theta_max bounds the search box.
        hi_domain = delta * math.log1p(env.theta_max / delta)
    else:
        hi_domain = math.inf
    theta, iters = _bracketed_argmax(deriv, hi_domain)
    val, quad_err = objective_integral(theta)
    residual = abs(deriv(theta))
    if residual > 1e-8:
        raise ConvergenceError(f"stationarity residual {residual:.2e} > 1e-8")
    return RateResult(
        rate=min(0.0, -(theta * a - val)),
        theta_star=theta,
        regime="intermediate",
        speed=SPEED_INTERMEDIATE,
        diagnostics={
            "stationarity_residual": residual,
            "iterations": iters,
            "quad_abserr": quad_err,
        },
    )


def classify_regime(query: RateQuery) -> str:
    """fast / intermediate / slow_unbounded / slow_bounded per (alpha, u(t), a)."""
    a = query._scalar_a
    if a <= query.rho_t:
        raise DomainError(f"need a > rho(t) = {query.rho_t}")
    if query.alpha > 1:
        return "fast"
    if query.alpha == 1:
        return "intermediate"
    return "slow_unbounded" if query.u_t >= a else "slow_bounded"


# ---------------------------------------------------------------------------
# Importance sampling for the slow branch.


def is_estimate_tail(
    query: RateQuery,
    scaling: ScalingRegime,
    replications: int,
    rng: np.random.Generator,
    theta_star: float | None = None,
) -> tuple[float, float]:
    """Estimate P(k_t(L^(N)) >= a) by exponential twisting, slow branch.

    Each replication draws slot rates under the measure Q with per-slot tilt
    eta_j = theta* e^(-mu j Delta_N), evaluates the discretized parameter
    k_t = Delta_N sum_j L_j e^(-mu j Delta_N), and weighs the indicator
    {k_t >= a} by prod_j M(eta_j) e^(-eta_j L_j) (log-space accumulation).
    Returns (estimate, relative standard error).
    """
    if scaling.alpha != query.alpha or scaling.delta != query.delta:
        raise ValueError("scaling must match the query's (alpha, delta)")
    a, mu, env = query._scalar_a, query._scalar_mu, query.env
    if a <= query.rho_t:
        raise DegenerateQuery(
            f"a = {a} <= rho(t) = {query.rho_t}: not a rare event, use plain Monte Carlo"
        )
    if theta_star is None:
        theta_star = rate_slow(query).theta_star
    h = scaling.delta_n
    J = int(math.floor(query.t / h))
    if J == 0:
        raise ValueError("no full slots before t; increase t or the sampling frequency")
    decay = np.exp(-mu * h * np.arange(J))
    eta = theta_star * decay
    log_norm = sum(env.log_mgf(e) for e in eta)

    # chunk replications to bound the (chunk x J) draw matrix
    chunk = max(1, int(4_000_000 / J))
    logw_parts = []
    done = 0
    while done < replications:
        n = min(chunk, replications - done)
        lam = np.empty((n, J))
        for j in range(J):
            lam[:, j] = env.sample_twisted(eta[j], rng, n)
        k_t = h * (lam @ decay)
        log_lr = log_norm - lam @ eta
        logw_parts.append(np.where(k_t >= a, log_lr, -np.inf))
        done += n
    logw = np.concatenate(logw_parts)
    logw = logw[np.isfinite(logw)]
    if logw.size == 0:
        return 0.0, math.inf
    log_mean = logsumexp(logw) - math.log(replications)
    log_sq = logsumexp(2.0 * logw) - math.log(replications)
    prob = math.exp(log_mean)
    # Var(W)/R / prob^2, with E[W^2] and E[W]^2 kept in log space
    rel_var = math.expm1(min(log_sq - 2.0 * log_mean, 700.0))
    rel_err = math.sqrt(max(rel_var, 0.0) / replications)
    return prob, rel_err


# ---------------------------------------------------------------------------
# Multivariate (coupled queues, rectangular sets).


def _mv_limit_log_mgf(query: RateQuery):
    """Limiting log-MGF Gamma(theta) and the per-theta domain guard."""
    env, t, delta = query.env, query.t, query.delta
    mu = np.asarray(query.mu, dtype=float)

    if query.alpha > 1:

        def gamma(theta):
            def integrand(s):
                return np.prod(np.exp(-mu * s) * np.expm1(theta) + 1.0)

            val, _ = quad(integrand, 0.0, t, **_QUAD_KW)
            return env.mean * (val - t)

        def in_domain(theta):
            return True

        return gamma, in_domain, "fast", SPEED_N

    if query.alpha == 1:

        def gamma(theta):
            scaled = np.expm1(theta / delta)

            def integrand(s):
                return env.log_mgf(delta * (np.prod(np.exp(-mu * s) * scaled + 1.0) - 1.0))

            val, _ = quad(integrand, 0.0, t, **_QUAD_KW)
            return val

        def in_domain(theta):
            worst = delta * (np.prod(np.expm1(theta / delta) + 1.0) - 1.0)
            return worst < env.theta_max - 1e-11

        return gamma, in_domain, "intermediate", SPEED_INTERMEDIATE

    def gamma(theta):
        def integrand(s):
            return env.log_mgf(float(theta @ np.exp(-mu * s)))

        val, _ = quad(integrand, 0.0, t, **_QUAD_KW)
        return val

    def in_domain(theta):
        return float(theta.sum()) < env.theta_max - 1e-11

    return gamma, in_domain, "slow_unbounded", SPEED_SLOW


def rate_multivariate(query: RateQuery) -> RateResult:
    """Decay rate of the rectangle prod_i [a_i, inf) for the coupled model.

    The objective sum_i theta_i a_i - Gamma(theta) is increasing in each a_i,
    so the outer infimum over the rectangle is attained at the corner a; the
    inner supremum runs over theta >= 0 (projected quasi-Newton, numeric
    gradients over the quadrature).
    """
    mu = np.asarray(query.mu, dtype=float)
    a = np.atleast_1d(np.asarray(query.a, dtype=float))
    if mu.ndim == 0:
        mu = mu[None]
    if a.shape != mu.shape:
        raise ValueError("a and mu must have matching length")
    fluid = query.env.mean * (-np.expm1(-mu * query.t)) / mu
    if np.any(a <= fluid):
        raise DomainError(f"each a_i must exceed the fluid value {fluid.tolist()}")

    gamma, in_domain, regime, speed = _mv_limit_log_mgf(query)
    d = mu.size
    penalty = 1e50

    def neg_objective(theta):
        theta = np.asarray(theta)
        if np.any(theta < 0) or not in_domain(theta):
            return penalty * (1.0 + float(np.abs(theta).sum()))
        return -(float(theta @ a) - gamma(theta))

    x0 = np.full(d, 1e-3)
    bounds = [(0.0, None)] * d
    if math.isfinite(query.env.theta_max):
        cap = None
        if regime == "slow_unbounded":
            cap = query.env.theta_max * (1.0 - 1e-9)
        elif regime == "intermediate":
            cap = query.delta * math.log1p(query.env.theta_max / query.delta) * (1.0 - 1e-9)
        bounds = [(0.0, cap)] * d
    res = minimize(
        neg_objective,
        x0,
        method="L-BFGS-B",
        bounds=bounds,
        options=dict(maxiter=500, maxfun=20_000, ftol=1e-15, gtol=1e-9, eps=1e-7),
    )
    theta = np.maximum(res.x, 0.0)
    # projected-gradient residual by central differences
    grad = np.empty(d)
    step = 1e-5
    for i in range(d):
        up = theta.copy()
        dn = theta.copy()
        up[i] += step
        dn[i] = max(dn[i] - step, 0.0)
        width = up[i] - dn[i]
        grad[i] = (neg_objective(up) - neg_objective(dn)) / width
    projected = np.where((theta <= 1e-12) & (grad > 0), 0.0, grad)
    gnorm = float(np.abs(projected).max())
    if gnorm > 1e-6:
        raise ConvergenceError(
            f"projected gradient norm {gnorm:.2e} > 1e-6 after {res.nit} iterations"
        )
    value = -neg_objective(theta)
    return RateResult(
        rate=min(0.0, -value),
        theta_star=theta,
        regime=regime,
        speed=speed,
        diagnostics={
            "iterations": res.nit,
            "projected_grad_norm": gnorm,
            "corner": a.tolist(),
        },
    )
