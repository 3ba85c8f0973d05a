import itertools
import math
from decimal import Decimal, getcontext
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.special import entr

from src.boltzmann import (
    boltzmann_probabilities,
    entropy,
    solve_boltzmann,
    tilt_mean,
    tilt_probabilities,
    tilt_variance,
)
from src.exceptions import ConvergenceError, InfeasibleConstraintError
from src.models import ProbabilityVector
from src.serialization import jsonable


def decimal_mean(values, lam, digits=50):
    """m(lambda) evaluated in high precision"""
    getcontext().prec = digits
    lam = Decimal(repr(lam))
    xs = [Decimal(repr(float(x))) for x in values]
    top = max(lam * x for x in xs)
    weights = [(lam * x - top).exp() for x in xs]
    total = sum(weights)
    return float(sum(w * x for w, x in zip(weights, xs)) / total)


@lru_cache(maxsize=None)
def simplex_grid(k, steps=100):
    """All probability vectors with coordinates on a 1/steps grid"""
    rows = [c for c in itertools.product(range(steps + 1), repeat=k - 1) if sum(c) <= steps]
    head = np.array(rows, dtype=float)
    last = steps - head.sum(axis=1, keepdims=True)
    return np.hstack([head, last]) / steps


class TestTwoPointExactness:
    def test_quarter_mean_on_zero_one(self):
        """Test {0, 1} with alpha 0.25 gives (0.75, 0.25) and lambda ln(1/3)"""
        solution = solve_boltzmann([0.0, 1.0], 0.25)
        assert solution.distribution.probs == pytest.approx([0.75, 0.25], abs=1e-12)
        assert solution.lambda_ == pytest.approx(math.log(1 / 3), abs=1e-12)
        assert not solution.degenerate

    def test_lambda_zero_at_midpoint(self):
        """Test the uniform vector is returned when alpha is the plain average"""
        solution = solve_boltzmann([-1.0, 0.0, 1.0], 0.0)
        assert solution.lambda_ == 0.0
        assert solution.distribution.probs == pytest.approx([1 / 3] * 3, abs=1e-15)
        assert solution.entropy == pytest.approx(math.log(3))

    def test_mean_against_decimal_oracle(self):
        """Test the solved lambda reproduces alpha in 50-digit arithmetic"""
        rng = np.random.default_rng(3)
        for _ in range(50):
            values = np.sort(rng.uniform(-10, 10, size=int(rng.integers(2, 8))))
            alpha = float(values[0] + (values[-1] - values[0]) * rng.uniform(0.05, 0.95))
            solution = solve_boltzmann(values, alpha)
            assert decimal_mean(values, solution.lambda_) == pytest.approx(alpha, abs=1e-10)


class TestTiltFamily:
    def test_monotone_and_derivative(self):
        """Test m(lambda) increases and v(lambda) matches centered differences"""
        rng = np.random.default_rng(20240601)
        grid = np.linspace(-5.0, 5.0, 101)
        h = 1e-5
        for _ in range(1000):
            values = rng.uniform(-10, 10, size=int(rng.integers(2, 11)))
            if np.unique(values).size != values.size:
                continue
            means = [tilt_mean(values, lam) for lam in grid]
            variances = [tilt_variance(values, lam) for lam in grid]
            for i in range(100):
                assert means[i + 1] >= means[i]
                if variances[i] > 1e-9:
                    assert means[i + 1] > means[i]
            for lam in grid[::10]:
                slope = (tilt_mean(values, lam + h) - tilt_mean(values, lam - h)) / (2 * h)
                assert tilt_variance(values, lam) == pytest.approx(slope, abs=1e-6)

    def test_extreme_tilt_is_stable(self):
        """Test huge lambda saturates instead of overflowing"""
        p = tilt_probabilities([0.0, 1.0, 2.0], 1e6)
        assert np.all(np.isfinite(p))
        assert p.tolist() == [0.0, 0.0, 1.0]
        assert tilt_mean([0.0, 1.0, 2.0], -1e6) == 0.0

    def test_known_values(self):
        """Test m and v at lambda 0, constant values and a decimal check at a negative tilt"""
        assert tilt_mean([0.0, 1.0], 0.0) == 0.5
        assert tilt_variance([0.0, 1.0], 0.0) == 0.25
        assert tilt_variance([2.5, 2.5, 2.5], 3.7) == 0.0
        assert tilt_mean([0.0, 1.0, 3.0], -0.2) == pytest.approx(decimal_mean([0.0, 1.0, 3.0], -0.2), abs=1e-14)

    def test_large_values(self):
        """Test 10000 values of magnitude 1e6 solve without overflow"""
        rng = np.random.default_rng(5)
        values = rng.uniform(-1e6, 1e6, size=10_000)
        for fraction in (0.5, 0.999):
            alpha = float(values.mean() + fraction * (values.max() - values.mean()))
            solution = solve_boltzmann(values, alpha)
            assert math.isfinite(solution.lambda_)
            assert solution.mean == pytest.approx(alpha, abs=1e-4)
            p = tilt_probabilities(values, solution.lambda_)
            assert np.all(np.isfinite(p))
            assert p.sum() == pytest.approx(1.0, abs=1e-12)

    def test_entropy_of_uniform(self):
        """Test entropy reaches log k on the uniform vector"""
        p = ProbabilityVector(values=[1.0, 2.0, 3.0, 4.0], probs=[0.25] * 4)
        assert entropy(p) == pytest.approx(math.log(4))


class TestEquivariance:
    @pytest.mark.parametrize("scale, shift", [(1000.0, 5.0), (1e-3, -3.0), (7.0, 1e5)])
    def test_affine_change_of_values(self, scale, shift):
        """Test values*s + t with target alpha*s + t keeps p and divides lambda by s"""
        values = np.array([0.0, 1.0, 3.0])
        base = solve_boltzmann(values, 1.0)
        moved = solve_boltzmann(values * scale + shift, 1.0 * scale + shift)
        assert moved.distribution.probs == pytest.approx(base.distribution.probs, abs=1e-9)
        assert moved.lambda_ * scale == pytest.approx(base.lambda_, rel=1e-8)

    def test_shift_only_keeps_lambda(self):
        """Test translating values and target leaves lambda unchanged"""
        rng = np.random.default_rng(9)
        for _ in range(20):
            values = np.sort(rng.uniform(-5, 5, size=int(rng.integers(2, 7))))
            alpha = float(values[0] + (values[-1] - values[0]) * rng.uniform(0.1, 0.9))
            shift = float(rng.uniform(-100, 100))
            assert solve_boltzmann(values + shift, alpha + shift).lambda_ == pytest.approx(
                solve_boltzmann(values, alpha).lambda_, rel=1e-8, abs=1e-10
            )


class TestEntropyMaximality:
    def _cases(self, count=200, seed=5):
        rng = np.random.default_rng(seed)
        for _ in range(count):
            k = int(rng.integers(2, 5))
            values = np.sort(rng.uniform(0.0, 1.0, size=k))
            if np.min(np.diff(values)) < 1e-3:
                continue
            alpha = float(values[0] + (values[-1] - values[0]) * rng.uniform(0.1, 0.9))
            yield values, alpha

    def test_beats_brute_force_grid(self):
        """Test no grid vector near the constraint beats the solver beyond the concavity slack"""
        tolerance = 5e-3
        for values, alpha in self._cases():
            grid = simplex_grid(len(values))
            near = np.abs(grid @ values - alpha) <= tolerance
            best = float(entr(grid[near]).sum(axis=1).max())
            solution = solve_boltzmann(values, alpha)
            # optimal entropy is concave in alpha with slope -lambda
            assert solution.entropy >= best - abs(solution.lambda_) * tolerance - 1e-9

    def test_best_grid_vector_at_its_own_mean(self):
        """Test the solver at a grid vector's exact mean matches or beats that vector"""
        for values, alpha in self._cases(count=100, seed=9):
            grid = simplex_grid(len(values))
            near = np.abs(grid @ values - alpha) <= 5e-3
            candidates = grid[near]
            entropies = entr(candidates).sum(axis=1)
            best = candidates[int(np.argmax(entropies))]
            own_mean = float(best @ values)
            if not values[0] < own_mean < values[-1]:
                continue
            assert solve_boltzmann(values, own_mean).entropy >= float(entropies.max()) - 1e-9


class TestBoundaryTargets:
    def test_duplicated_minimum(self):
        """Test mass is uniform over the duplicated smallest value"""
        solution = solve_boltzmann([0.0, 0.0, 1.0], 0.0)
        assert solution.distribution.probs == [0.5, 0.5, 0.0]
        assert solution.lambda_ == -math.inf
        assert jsonable(solution)["lambda"] == "-inf"

    def test_duplicated_maximum(self):
        """Test mass is uniform over the duplicated largest value"""
        solution = solve_boltzmann([0.0, 1.0, 1.0], 1.0)
        assert solution.distribution.probs == [0.0, 0.5, 0.5]
        assert solution.lambda_ == math.inf

    def test_single_maximum(self):
        """Test a target at the top puts all mass there"""
        assert boltzmann_probabilities([0.0, 1.0, 2.0], 2.0).probs == [0.0, 0.0, 1.0]

    def test_all_values_equal(self):
        """Test equal values give the uniform vector with lambda 0"""
        solution = solve_boltzmann([2.0, 2.0], 2.0)
        assert solution.degenerate
        assert solution.lambda_ == 0.0
        assert solution.distribution.probs == [0.5, 0.5]

    def test_single_value(self):
        """Test one value is its own point mass"""
        solution = solve_boltzmann([3.0], 3.0)
        assert solution.distribution.probs == [1.0]


class TestErrors:
    @pytest.mark.parametrize("alpha", [-0.1, 1.1])
    def test_alpha_outside_range(self, alpha):
        """Test targets outside [min, max] are infeasible"""
        with pytest.raises(InfeasibleConstraintError):
            solve_boltzmann([0.0, 1.0], alpha)

    def test_equal_values_wrong_target(self):
        """Test equal values only admit their common value"""
        with pytest.raises(InfeasibleConstraintError):
            solve_boltzmann([1.0, 1.0], 0.5)

    def test_empty_values(self):
        """Test an empty list is infeasible"""
        with pytest.raises(InfeasibleConstraintError):
            solve_boltzmann([], 0.0)

    def test_non_finite_values(self):
        """Test NaN values are rejected"""
        with pytest.raises(InfeasibleConstraintError):
            solve_boltzmann([0.0, float("nan")], 0.0)

    def test_iteration_cap(self):
        """Test the iteration cap raises ConvergenceError with the bracket"""
        with pytest.raises(ConvergenceError) as excinfo:
            solve_boltzmann([0.0, 1.0], 0.25, max_iterations=1)
        low, high = excinfo.value.bracket
        assert low < high
        assert excinfo.value.iterations == 1

    def test_non_positive_tolerance(self):
        """Test tolerance must be positive"""
        with pytest.raises(ValueError):
            solve_boltzmann([0.0, 1.0], 0.5, tol=0.0)


class TestProperties:
    @settings(max_examples=200, deadline=None)
    @given(
        values=st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=8, unique=True),
        fraction=st.floats(0.01, 0.99),
    )
    def test_interior_solution(self, values, fraction):
        """Test interior targets are met with a finite tilt ordering the probabilities"""
        low, high = min(values), max(values)
        assume(high - low > 1e-3)
        alpha = low + fraction * (high - low)
        solution = solve_boltzmann(values, alpha)

        assert math.isfinite(solution.lambda_)
        assert solution.distribution.mean() == pytest.approx(alpha, abs=1e-10 * (high - low) + 1e-12)
        assert all(p > 0 for p in solution.distribution.probs)
        assert 0.0 <= solution.entropy <= math.log(len(values)) + 1e-12
        ordered = sorted(zip(values, solution.distribution.probs))
        probs = [p for _, p in ordered]
        if solution.lambda_ > 0:
            assert probs == sorted(probs)
        elif solution.lambda_ < 0:
            assert probs == sorted(probs, reverse=True)
