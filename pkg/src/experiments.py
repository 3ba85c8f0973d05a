"""Numerical studies on measure-free martingales.

- pointwise convergence of martingales with geometrically shrinking
  increments (a finite stand-in for equicontinuity),
- Boltzmann distributions on epsilon-nets of a compact set as epsilon
  shrinks,
- the tilt field g_n and whether it is itself a measure-free martingale.

Everything here reports evidence; nothing asserts an expected limit.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from config.settings import Settings
from src.boltzmann import entropy, solve_boltzmann
from src.exceptions import EnvelopeViolationError, InfeasibleConstraintError
from src.filtration import build_tree, children_values, envelope, envelope_of
from src.models import (
    AtomPath,
    Cell,
    ConvergenceReport,
    DistanceReport,
    EnvelopeReport,
    EquicontinuousSpec,
    FiltrationTree,
    LambdaField,
    NetDistribution,
    NetStudy,
    NetStudyRow,
    ProbabilityVector,
)

logger = logging.getLogger(__name__)

BOUND_SLACK = 1e-12


def _child_offsets(rng: np.random.Generator, parent: float, window: float, branching: int) -> List[float]:
    """Distinct child values in [parent - window, parent + window] bracketing parent"""
    if branching == 1:
        return [parent]
    while True:
        offsets = rng.uniform(-1.0, 1.0, size=branching)
        offsets[0] = -abs(offsets[0])
        offsets[1] = abs(offsets[1])
        values = sorted(parent + window * float(o) for o in offsets)
        if len(set(values)) == branching:
            return values


def generate_equicontinuous(spec: EquicontinuousSpec) -> FiltrationTree:
    """Random tree with |f_{n+1}(Q') - f_n(Q)| <= c * r**n for every child Q' of Q.

    Deterministic for a given seed; always a measure-free martingale.
    """
    rng = np.random.default_rng(spec.seed)
    width = len(str(spec.branching ** (spec.depth - 1)))
    root = Cell(id=f"e1-{0:0{width}d}", level=1, parent=None, value=float(spec.root_value))
    cells = [root]
    frontier = [root]
    for level in range(1, spec.depth):
        window = spec.increment(level)
        next_frontier = []
        for node in frontier:
            for value in _child_offsets(rng, node.value, window, spec.branching):
                child = Cell(
                    id=f"e{level + 1}-{len(next_frontier):0{width}d}",
                    level=level + 1,
                    parent=node.id,
                    value=value,
                )
                next_frontier.append(child)
        cells.extend(next_frontier)
        frontier = next_frontier
    logger.info(f"Generated equicontinuous tree: depth {spec.depth}, {len(cells)} cells, seed {spec.seed}")
    return build_tree(spec.depth, cells)


def _geometric_fit(osc: Sequence[float]) -> Tuple[Optional[float], Optional[float]]:
    """Least-squares fit osc(n) ~ scale * rate**n over the positive entries"""
    levels = [n for n, value in enumerate(osc, start=1) if value > 0]
    if len(levels) < 2:
        return None, None
    logs = [math.log(osc[n - 1]) for n in levels]
    slope, intercept = np.polyfit(levels, logs, 1)
    return math.exp(slope), math.exp(intercept)


def convergence_report(tree: FiltrationTree, spec: Optional[EquicontinuousSpec] = None) -> ConvergenceReport:
    """Per-atom paths f_1..f_N and tail oscillations osc(n) = max_{m>=n} |f_m - f_N|"""
    atoms = tree.atoms()
    paths = np.array([[tree.cells[c].value for c in tree.ancestors(atom)] for atom in atoms], dtype=float)
    deviation = np.abs(paths - paths[:, -1:])
    osc = np.maximum.accumulate(deviation[:, ::-1], axis=1)[:, ::-1]

    atom_paths = []
    for atom, values, tail in zip(atoms, paths, osc):
        rate, scale = _geometric_fit(tail.tolist())
        atom_paths.append(
            AtomPath(atom_id=atom, values=values.tolist(), osc=tail.tolist(), rate=rate, scale=scale)
        )
    max_osc = osc.max(axis=0).tolist()
    rate, scale = _geometric_fit(max_osc)

    bound = within = None
    if spec is not None:
        bound = [spec.tail_bound(n) for n in range(1, tree.depth + 1)]
        within = all(value <= limit + BOUND_SLACK for value, limit in zip(max_osc, bound))
    return ConvergenceReport(
        depth=tree.depth,
        atoms=atom_paths,
        max_osc=max_osc,
        bound=bound,
        within_bound=within,
        rate=rate,
        scale=scale,
    )


def epsilon_net(sample: Sequence[float], epsilon: float, start: int = 0) -> List[float]:
    """Greedy epsilon-net of a sorted sample.

    Starting at sample[start], sweep right keeping every point farther
    than epsilon from the last kept one, then sweep left the same way.
    Kept points are pairwise more than epsilon apart.
    """
    points = np.unique(np.asarray(sample, dtype=float))
    if points.size == 0:
        raise ValueError("Sample is empty")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not 0 <= start < points.size:
        raise ValueError(f"start index {start} outside sample of size {points.size}")

    right = [float(points[start])]
    for x in points[start + 1:]:
        if x - right[-1] > epsilon:
            right.append(float(x))
    left: List[float] = []
    anchor = right[0]
    for x in points[:start][::-1]:
        if anchor - x > epsilon:
            left.append(float(x))
            anchor = float(x)
    left.reverse()
    return left + right


def net_boltzmann(support: Sequence[float], alpha: float, epsilon: Optional[float] = None) -> NetDistribution:
    """Boltzmann distribution on a net for a mean strictly inside its range"""
    points = np.unique(np.asarray(support, dtype=float))
    if points.size == 0:
        raise InfeasibleConstraintError("Net is empty")
    if not points[0] < alpha < points[-1]:
        raise InfeasibleConstraintError(
            f"alpha {alpha!r} must lie strictly between {points[0]!r} and {points[-1]!r}"
        )
    solution = solve_boltzmann(points, alpha)
    return NetDistribution(
        support=solution.distribution.values,
        probs=solution.distribution,
        epsilon=epsilon,
        alpha=alpha,
        lambda_=solution.lambda_,
    )


def _values_and_probs(distribution: Union[NetDistribution, ProbabilityVector]) -> Tuple[np.ndarray, np.ndarray]:
    vector = distribution.probs if isinstance(distribution, NetDistribution) else distribution
    values, inverse = np.unique(np.asarray(vector.values, dtype=float), return_inverse=True)
    probs = np.bincount(inverse, weights=np.asarray(vector.probs, dtype=float), minlength=values.size)
    return values, probs


def _cdf(grid: np.ndarray, values: np.ndarray, probs: np.ndarray) -> np.ndarray:
    cumulative = np.cumsum(probs)
    index = np.searchsorted(values, grid, side="right")
    return np.where(index > 0, cumulative[np.maximum(index - 1, 0)], 0.0)


def distribution_distance(
    a: Union[NetDistribution, ProbabilityVector],
    b: Union[NetDistribution, ProbabilityVector],
) -> DistanceReport:
    """Kolmogorov (sup |F_a - F_b|) and Wasserstein-1 (integral |F_a - F_b|) distances"""
    values_a, probs_a = _values_and_probs(a)
    values_b, probs_b = _values_and_probs(b)
    grid = np.union1d(values_a, values_b)
    gap = np.abs(_cdf(grid, values_a, probs_a) - _cdf(grid, values_b, probs_b))
    kolmogorov = float(gap.max())
    wasserstein = float(np.sum(gap[:-1] * np.diff(grid)))
    return DistanceReport(kolmogorov=kolmogorov, wasserstein1=max(wasserstein, 0.0))


def _jitter_starts(size: int, jitter_nets: int) -> List[int]:
    starts = sorted({(j * size) // (jitter_nets + 1) for j in range(1, jitter_nets + 1)} - {0})
    return starts


def net_convergence_study(
    sample: Sequence[float],
    alpha: float,
    eps_sequence: Sequence[float],
    jitter_nets: int = 0,
    max_workers: Optional[int] = None,
) -> NetStudy:
    """Boltzmann net distributions for a decreasing epsilon sequence.

    Each row carries the net size, lambda, distances to the previous
    row's distribution and, with jitter_nets > 0, the largest distance
    between the greedy net and nets started at other sample points.
    """
    points = np.unique(np.asarray(sample, dtype=float))
    if points.size == 0:
        raise ValueError("Sample is empty")
    eps = [float(e) for e in eps_sequence]
    if not eps:
        raise ValueError("eps_sequence is empty")
    if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError(f"eps_sequence must be positive and strictly decreasing, got {eps}")
    if not points[0] < alpha < points[-1]:
        raise InfeasibleConstraintError(
            f"alpha {alpha!r} must lie strictly between {points[0]!r} and {points[-1]!r}"
        )
    if jitter_nets < 0:
        raise ValueError(f"jitter_nets must be nonnegative, got {jitter_nets}")
    starts = _jitter_starts(points.size, jitter_nets)

    def evaluate(epsilon: float) -> Tuple[NetDistribution, List[DistanceReport]]:
        base = net_boltzmann(epsilon_net(points, epsilon), alpha, epsilon)
        cross = [
            distribution_distance(base, net_boltzmann(epsilon_net(points, epsilon, start=s), alpha, epsilon))
            for s in starts
        ]
        return base, cross

    workers = max_workers or Settings.MAX_WORKERS
    with ThreadPoolExecutor(max_workers=workers) as executor:
        results = list(executor.map(evaluate, eps))

    rows: List[NetStudyRow] = []
    previous: Optional[NetDistribution] = None
    for epsilon, (net, cross) in zip(eps, results):
        to_previous = distribution_distance(previous, net) if previous is not None else None
        rows.append(
            NetStudyRow(
                epsilon=epsilon,
                net_size=len(net.support),
                lambda_=net.lambda_,
                mean=net.probs.mean(),
                entropy=entropy(net.probs),
                kolmogorov_prev=to_previous.kolmogorov if to_previous else None,
                wasserstein1_prev=to_previous.wasserstein1 if to_previous else None,
                cross_kolmogorov=max((d.kolmogorov for d in cross), default=None),
                cross_wasserstein1=max((d.wasserstein1 for d in cross), default=None),
                jitter_nets=len(cross),
            )
        )
        previous = net
    logger.info(f"Net study finished: {len(rows)} epsilon value(s), {len(starts)} jittered net(s) each")
    return NetStudy(alpha=float(alpha), sample_size=int(points.size), rows=rows)


def lambda_field(tree: FiltrationTree) -> Tuple[LambdaField, EnvelopeReport]:
    """Boltzmann tilt g(Q) of every non-leaf cell, and the envelope check of g.

    g lives on levels 1..N-1 of the same partitions. Cells whose tilt is
    infinite (cell value equal to its smallest or largest child) are
    listed and left out of the check.
    """
    report = envelope(tree)
    if not report.ok:
        first = report.violations[0]
        raise EnvelopeViolationError(f"Cell '{first}' lies outside its children's range", first)
    if tree.depth < 3:
        logger.warning(f"Tree depth {tree.depth} < 3: the tilt field has no level to compare against")

    values = {}
    infinite = []
    for cell_id in tree.internal_cells():
        child_values = [value for _, value in children_values(tree, cell_id)]
        lam = solve_boltzmann(child_values, tree.cells[cell_id].value).lambda_
        values[cell_id] = lam
        if math.isinf(lam):
            infinite.append(cell_id)
    if infinite:
        logger.warning(f"{len(infinite)} cell(s) have infinite tilt and are excluded from the check")

    field = LambdaField(depth=max(tree.depth - 1, 0), values=values, infinite_cells=infinite)
    field_report = envelope_of(tree, values.__getitem__, exclude=infinite, depth=tree.depth - 1)
    return field, field_report
