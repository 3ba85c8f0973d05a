"""Maximum-entropy probabilities under a mean constraint.

For values x_1..x_k the Boltzmann family p_i(lambda) ~ exp(lambda * x_i)
has mean m(lambda), strictly increasing with derivative equal to the
variance v(lambda). The solver inverts m.
"""

import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import entr

from config.settings import Settings
from src.exceptions import ConvergenceError, InfeasibleConstraintError
from src.models import BoltzmannSolution, ProbabilityVector

logger = logging.getLogger(__name__)

MAX_BRACKET_EXPANSIONS = 2000
POLISH_STEPS = 3


def _as_values(values: Sequence[float]) -> np.ndarray:
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise InfeasibleConstraintError("Values list is empty")
    if not np.all(np.isfinite(x)):
        raise InfeasibleConstraintError("Values must be finite")
    return x


def _center(x: np.ndarray) -> float:
    return 0.5 * (float(x.min()) + float(x.max()))


def _tilt(x: np.ndarray, lam: float) -> np.ndarray:
    # max-shift keeps every exponent <= 0
    z = lam * (x - _center(x))
    w = np.exp(z - z.max())
    return w / w.sum()


def _moments(x: np.ndarray, lam: float) -> Tuple[np.ndarray, float, float]:
    """Probabilities, mean and variance at lam, computed about the midrange"""
    p = _tilt(x, lam)
    c = _center(x)
    d = x - c
    shift = float(p @ d)
    mean = min(max(c + shift, float(x.min())), float(x.max()))
    variance = float(p @ (d - shift) ** 2)
    return p, mean, max(variance, 0.0)


def tilt_probabilities(values: Sequence[float], lam: float) -> np.ndarray:
    """p_i(lambda) = exp(lambda x_i) / sum_j exp(lambda x_j)"""
    return _tilt(_as_values(values), float(lam))


def tilt_mean(values: Sequence[float], lam: float) -> float:
    """m(lambda), always within [min(values), max(values)]"""
    return _moments(_as_values(values), float(lam))[1]


def tilt_variance(values: Sequence[float], lam: float) -> float:
    """v(lambda) = dm/dlambda"""
    return _moments(_as_values(values), float(lam))[2]


def entropy(p: ProbabilityVector) -> float:
    """Natural-log entropy with 0 log 0 = 0, clipped to [0, log k]"""
    h = float(np.sum(entr(np.asarray(p.probs, dtype=float))))
    return min(max(h, 0.0), math.log(p.k))


def _solution(x, probs, lam, alpha, iterations=0, degenerate=False) -> BoltzmannSolution:
    distribution = ProbabilityVector.from_weights(x, probs)
    p = np.asarray(distribution.probs)
    c = _center(x)
    shift = float(p @ (x - c))
    mean = c + shift
    variance = float(max(p @ (x - c - shift) ** 2, 0.0))
    return BoltzmannSolution(
        distribution=distribution,
        lambda_=lam,
        mean=mean,
        variance=variance,
        entropy=entropy(distribution),
        iterations=iterations,
        residual=abs(mean - alpha),
        degenerate=degenerate,
    )


def _limit_solution(x: np.ndarray, alpha: float, upper: bool) -> BoltzmannSolution:
    """lambda -> +/-inf limit: uniform over the indices attaining max/min"""
    target = x.max() if upper else x.min()
    mask = (x == target).astype(float)
    lam = math.inf if upper else -math.inf
    logger.debug(f"Boundary target {alpha!r}: mass uniform on {int(mask.sum())} index(es), lambda={lam}")
    return _solution(x, mask, lam, alpha)


def _bracket(x: np.ndarray, alpha: float, spread: float) -> Tuple[float, float]:
    """Expand [-L, L] geometrically from L = 1/range until m brackets alpha"""
    lower = upper = 1.0 / spread
    expansions = 0
    while _moments(x, -lower)[1] > alpha:
        lower *= 2.0
        expansions += 1
        if expansions > MAX_BRACKET_EXPANSIONS:
            raise ConvergenceError("Could not bracket lambda from below", (-lower, upper), expansions)
    while _moments(x, upper)[1] < alpha:
        upper *= 2.0
        expansions += 1
        if expansions > MAX_BRACKET_EXPANSIONS:
            raise ConvergenceError("Could not bracket lambda from above", (-lower, upper), expansions)
    logger.debug(f"Bracket [{-lower!r}, {upper!r}] after {expansions} expansion(s)")
    return -lower, upper


def solve_boltzmann(
    values: Sequence[float],
    alpha: float,
    tol: Optional[float] = None,
    max_iterations: Optional[int] = None,
) -> BoltzmannSolution:
    """Unique max-entropy probability vector with mean alpha.

    Interior targets are solved by safeguarded Newton on m(lambda) - alpha
    with v(lambda) as derivative and bisection whenever a Newton step
    leaves the bracket. Targets within tol * range of an end point return
    the lambda = -inf / +inf limit distribution.
    """
    x = _as_values(values)
    alpha = float(alpha)
    tol = Settings.SOLVER_TOLERANCE if tol is None else tol
    max_iterations = Settings.SOLVER_MAX_ITERATIONS if max_iterations is None else max_iterations
    if tol <= 0:
        raise ValueError(f"Tolerance must be positive, got {tol}")

    low, high = float(x.min()), float(x.max())
    spread = high - low

    if spread == 0.0:
        if abs(alpha - low) > tol * max(1.0, abs(low)):
            raise InfeasibleConstraintError(
                f"Target mean {alpha!r} differs from the common value {low!r}"
            )
        return _solution(x, np.ones_like(x), 0.0, alpha, degenerate=True)

    slack = tol * spread
    if alpha < low - slack or alpha > high + slack:
        raise InfeasibleConstraintError(
            f"Target mean {alpha!r} lies outside [{low!r}, {high!r}]"
        )
    if alpha <= low + slack:
        return _limit_solution(x, alpha, upper=False)
    if alpha >= high - slack:
        return _limit_solution(x, alpha, upper=True)

    lam = 0.0
    p, mean, variance = _moments(x, lam)
    if abs(mean - alpha) <= slack:
        return _solution(x, p, lam, alpha)

    a, b = _bracket(x, alpha, spread)
    iterations = 0
    while True:
        iterations += 1
        p, mean, variance = _moments(x, lam)
        f = mean - alpha
        if abs(f) <= slack:
            break
        if iterations >= max_iterations:
            raise ConvergenceError(
                f"Boltzmann solver did not converge in {max_iterations} iterations "
                f"(residual {abs(f)!r})",
                (a, b),
                iterations,
            )
        if f < 0:
            a = lam
        else:
            b = lam
        step = lam - f / variance if variance > 0 else math.nan
        if not a < step < b:
            step = 0.5 * (a + b)
        lam = step

    # a few extra Newton steps tighten lambda beyond the mean tolerance
    for _ in range(POLISH_STEPS):
        if variance <= 0 or f == 0.0:
            break
        candidate = lam - f / variance
        p_c, mean_c, variance_c = _moments(x, candidate)
        f_c = mean_c - alpha
        if abs(f_c) > abs(f):
            break
        lam, p, mean, variance, f = candidate, p_c, mean_c, variance_c, f_c

    logger.debug(f"Solved lambda={lam!r} in {iterations} iteration(s), residual {abs(f)!r}")
    return _solution(x, p, lam, alpha, iterations=iterations)


def boltzmann_probabilities(values: Sequence[float], alpha: float) -> ProbabilityVector:
    return solve_boltzmann(values, alpha).distribution
