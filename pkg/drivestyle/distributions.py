"""Random variates, conjugate updates and univariate fits used by the samplers.

Every sampler takes an explicit ``numpy.random.Generator``. Streams are built
on the counter-based Philox bit generator so a seed reproduces the same
variates on every platform.
"""

import logging
from dataclasses import dataclass
from enum import StrEnum
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy import optimize, stats

from drivestyle.errors import DecompositionError, FitError, ParameterDomainError
from drivestyle.models import EmissionMode

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]
RngStream = np.random.Generator

# Beta fits map observed data affinely onto [BETA_EPSILON, 1 - BETA_EPSILON]
BETA_EPSILON = 1e-6
MIN_FIT_SAMPLES = 10


def make_rng(seed: int, *keys: int) -> RngStream:
    """Create an independent stream for ``seed`` and an optional key path.

    The same (seed, keys) always yields the same stream, so per-fold or
    per-event streams do not depend on scheduling order.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *keys])))


def sample_categorical(log_weights: FloatArray, rng: RngStream) -> int:
    """Draw an index with probability proportional to ``exp(log_weights)``."""
    shifted = np.exp(log_weights - np.max(log_weights))
    cumulative = np.cumsum(shifted)
    index = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
    return min(index, len(cumulative) - 1)


# ============================================================================
# SIMPLEX SAMPLERS
# ============================================================================


def sample_gem(gamma: float, l_max: int, rng: RngStream, nu: FloatArray | float | None = None) -> FloatArray:
    """Truncated stick-breaking weights.

    Args:
        gamma: Concentration, > 0
        l_max: Truncation level, >= 1
        rng: Random stream
        nu: Optional fixed stick fractions (test hook); broadcast to l_max - 1

    Returns:
        Weights of length l_max; the last weight takes the remaining stick
    """
    if not gamma > 0:
        raise ParameterDomainError(f"GEM concentration must be positive, got {gamma}")
    if l_max < 1:
        raise ParameterDomainError(f"Truncation level must be >= 1, got {l_max}")

    if nu is None:
        fractions = rng.beta(1.0, gamma, size=l_max - 1)
    else:
        fractions = np.broadcast_to(np.asarray(nu, dtype=np.float64), (l_max - 1,)).copy()

    remaining = np.concatenate([[1.0], np.cumprod(1.0 - fractions)])
    weights = np.empty(l_max)
    weights[:-1] = fractions * remaining[:-1]
    weights[-1] = remaining[-1]
    return weights


def sample_dirichlet(alpha: npt.ArrayLike, rng: RngStream) -> FloatArray:
    """Dirichlet draw that tolerates zero and extreme concentrations.

    Zero entries stay exactly zero. Gamma variates are drawn in log space as
    Gamma(a + 1) * U^(1/a), which keeps tiny concentrations from underflowing
    the whole vector.
    """
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim != 1 or not np.all(np.isfinite(a)) or np.any(a < 0):
        raise ParameterDomainError("Dirichlet concentrations must be a finite nonnegative vector")
    positive = a > 0
    if not positive.any():
        raise ParameterDomainError("Dirichlet needs at least one positive concentration")

    conc = a[positive]
    with np.errstate(divide="ignore"):
        log_gamma = np.log(rng.standard_gamma(conc + 1.0)) + np.log(rng.random(conc.size)) / conc
    log_gamma -= np.max(log_gamma)
    weights = np.exp(log_gamma)

    result = np.zeros_like(a)
    result[positive] = weights / weights.sum()
    return result


# ============================================================================
# NORMAL-INVERSE-WISHART
# ============================================================================


def check_spd(matrix: FloatArray, what: str = "matrix") -> FloatArray:
    """Return the lower Cholesky factor or raise DecompositionError."""
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DecompositionError(f"{what} must be square, got shape {matrix.shape}")
    if not np.allclose(matrix, matrix.T, rtol=1e-10, atol=1e-12):
        raise DecompositionError(f"{what} is not symmetric")
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as e:
        raise DecompositionError(f"{what} is not positive-definite: {e}") from e


def sample_inverse_wishart(n0: float, S0: FloatArray, rng: RngStream) -> FloatArray:
    """Draw from IW(n0, S0) (mean S0 / (n0 - dim - 1)).

    Uses scipy's Bartlett-decomposition sampler on the Wishart of the inverse.
    """
    scale = np.atleast_2d(np.asarray(S0, dtype=np.float64))
    dim = scale.shape[0]
    check_spd(scale, "inverse-Wishart scale")
    if not n0 > dim - 1:
        raise ParameterDomainError(f"inverse-Wishart degrees of freedom must exceed {dim - 1}, got {n0}")

    draw = np.atleast_2d(np.asarray(stats.invwishart.rvs(df=n0, scale=scale, random_state=rng), dtype=np.float64))
    return (draw + draw.T) / 2.0


@dataclass(frozen=True)
class NIWPrior:
    """Normal-inverse-Wishart hyperparameters (also used for posteriors)."""

    mean0: FloatArray
    kappa0: float
    n0: float
    S0: FloatArray

    @property
    def dim(self) -> int:
        return int(self.mean0.shape[0])

    def __post_init__(self):
        if self.kappa0 <= 0:
            raise ParameterDomainError(f"kappa0 must be positive, got {self.kappa0}")
        if not self.n0 > self.dim - 1:
            raise ParameterDomainError(f"n0 must exceed dim - 1 = {self.dim - 1}, got {self.n0}")
        if self.S0.shape != (self.dim, self.dim):
            raise ParameterDomainError(f"S0 must be {self.dim}x{self.dim}, got {self.S0.shape}")


def niw_posterior(
    prior: NIWPrior, data: npt.ArrayLike, mode: EmissionMode = EmissionMode.LEARNED_MEAN
) -> NIWPrior:
    """Conjugate update of ``prior`` with the rows of ``data``.

    Under FIXED_ZERO_MEAN the mean is pinned at 0, so only the inverse-Wishart
    part is updated with the raw scatter about zero.
    """
    x = np.asarray(data, dtype=np.float64).reshape(-1, prior.dim)
    n = x.shape[0]
    if n == 0:
        return prior

    if mode is EmissionMode.FIXED_ZERO_MEAN:
        return NIWPrior(mean0=np.zeros(prior.dim), kappa0=prior.kappa0, n0=prior.n0 + n, S0=prior.S0 + x.T @ x)

    xbar = x.mean(axis=0)
    centered = x - xbar
    scatter = centered.T @ centered
    kappa_n = prior.kappa0 + n
    mean_n = (prior.kappa0 * prior.mean0 + n * xbar) / kappa_n
    shift = xbar - prior.mean0
    S_n = prior.S0 + scatter + (prior.kappa0 * n / kappa_n) * np.outer(shift, shift)
    return NIWPrior(mean0=mean_n, kappa0=kappa_n, n0=prior.n0 + n, S0=(S_n + S_n.T) / 2.0)


def sample_gaussian_params(
    posterior: NIWPrior, mode: EmissionMode, rng: RngStream
) -> tuple[FloatArray, FloatArray]:
    """Draw (mu, Sigma) from a NIW posterior.

    Returns:
        Mean vector and SPD covariance; the mean is exactly zero under FIXED_ZERO_MEAN
    """
    sigma = sample_inverse_wishart(posterior.n0, posterior.S0, rng)
    if mode is EmissionMode.FIXED_ZERO_MEAN:
        return np.zeros(posterior.dim), sigma

    chol = np.linalg.cholesky(sigma / posterior.kappa0)
    mu = posterior.mean0 + chol @ rng.standard_normal(posterior.dim)
    return mu, sigma


# ============================================================================
# UNIVARIATE FITS
# ============================================================================


class Family(StrEnum):
    NORMAL = "normal"
    BETA = "beta"
    STUDENT_T = "student-t"
    GAMMA = "gamma"


@dataclass(frozen=True)
class FittedDist:
    """Maximum-likelihood fit of one family.

    Parameters per family:
        normal: (mean, std)
        gamma: (shape, rate, loc)
        beta: (a, b, loc, scale), the affine map onto the unit interval folded in
        student-t: (df, loc, scale)
    """

    family: Family
    params: tuple[float, ...]
    loglik: float

    def frozen(self) -> Any:
        """The scipy frozen distribution on the original data scale."""
        p = self.params
        match self.family:
            case Family.NORMAL:
                return stats.norm(loc=p[0], scale=p[1])
            case Family.GAMMA:
                return stats.gamma(p[0], loc=p[2], scale=1.0 / p[1])
            case Family.BETA:
                return stats.beta(p[0], p[1], loc=p[2], scale=p[3])
            case Family.STUDENT_T:
                return stats.t(p[0], loc=p[1], scale=p[2])


def _t_location_scale(x: FloatArray, df: float, max_iter: int = 200, tol: float = 1e-10) -> tuple[float, float]:
    """EM for Student-t location and scale at fixed degrees of freedom."""
    mu = float(np.median(x))
    sigma = float(np.std(x))
    for _ in range(max_iter):
        z2 = ((x - mu) / sigma) ** 2
        w = (df + 1.0) / (df + z2)
        new_mu = float(np.sum(w * x) / np.sum(w))
        new_sigma = float(np.sqrt(np.sum(w * (x - new_mu) ** 2) / x.size))
        converged = abs(new_mu - mu) < tol * (1 + abs(mu)) and abs(new_sigma - sigma) < tol * sigma
        mu, sigma = new_mu, new_sigma
        if converged:
            break
    return mu, sigma


def _fit_student_t(x: FloatArray) -> tuple[float, float, float]:
    def negative_profile(df: float) -> float:
        loc, scale = _t_location_scale(x, df)
        return -float(np.sum(stats.t.logpdf(x, df, loc=loc, scale=scale)))

    # Bounded Brent search: golden-section steps with parabolic acceleration
    result = optimize.minimize_scalar(negative_profile, bounds=(1.0, 100.0), method="bounded")
    df = float(result.x)
    loc, scale = _t_location_scale(x, df)
    return df, loc, scale


def fit_distribution(data: npt.ArrayLike, family: Family) -> FittedDist:
    """Fit ``family`` to ``data`` by maximum likelihood.

    Gamma data with nonpositive values is shifted just below its minimum; Beta
    data is mapped affinely onto [eps, 1 - eps]. The reported loglik is always
    evaluated on the original data, Jacobian included.
    """
    x = np.asarray(data, dtype=np.float64).ravel()
    if x.size < MIN_FIT_SAMPLES:
        raise FitError(f"need at least {MIN_FIT_SAMPLES} samples to fit {family}, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise FitError("data contains non-finite values")
    span = float(np.ptp(x))
    if span == 0.0 or float(np.std(x)) == 0.0:
        raise FitError(f"cannot fit {family} to data with zero variance")

    try:
        match family:
            case Family.NORMAL:
                params: tuple[float, ...] = (float(np.mean(x)), float(np.std(x)))
            case Family.GAMMA:
                loc = 0.0 if x.min() > 0 else float(x.min()) - BETA_EPSILON * span
                shape, _, scale = stats.gamma.fit(x - loc, floc=0.0)
                params = (float(shape), 1.0 / float(scale), loc)
            case Family.BETA:
                scale = span / (1.0 - 2.0 * BETA_EPSILON)
                loc = float(x.min()) - BETA_EPSILON * scale
                a, b, _, _ = stats.beta.fit((x - loc) / scale, floc=0.0, fscale=1.0)
                params = (float(a), float(b), loc, scale)
            case Family.STUDENT_T:
                params = _fit_student_t(x)
    except (RuntimeError, ValueError, FloatingPointError) as e:
        raise FitError(f"{family} fit failed: {e}") from e

    fitted = FittedDist(family=family, params=params, loglik=0.0)
    loglik = float(np.sum(fitted.frozen().logpdf(x)))
    if not np.isfinite(loglik):
        raise FitError(f"{family} fit produced a non-finite log-likelihood")
    logger.debug(f"Fitted {family} params={params} loglik={loglik:.3f}")
    return FittedDist(family=family, params=params, loglik=loglik)


def percentile(dist: FittedDist, p: float) -> float:
    """Inverse CDF of a fitted distribution at ``p`` percent."""
    if not 0.0 < p < 100.0:
        raise ParameterDomainError(f"percentile must lie in (0, 100), got {p}")
    return float(dist.frozen().ppf(p / 100.0))
