"""Martingale measures on filtration trees.

A measure is built level by level: every non-leaf cell Q splits its
mass over its children with a conditional vector p chosen by a rule,
subject to sum_i a_i p_i = f(Q). Extreme measures use conditionals of
support at most two; the Boltzmann measure uses max-entropy
conditionals.
"""

import itertools
import logging
import math
from abc import ABC, abstractmethod
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError
from scipy.optimize import nnls

from config.settings import Settings
from src.boltzmann import entropy, solve_boltzmann
from src.exceptions import (
    EnvelopeViolationError,
    InfeasibleConstraintError,
    InfeasibleRuleError,
    MeasureDocumentError,
)
from src.filtration import children_values, envelope, tree_hash
from src.models import (
    CellEntropy,
    CellSupport,
    EntropyProfile,
    EquivalenceReport,
    ExtremeSpec,
    FiltrationTree,
    MartingaleRecord,
    MartingaleReport,
    MeasureDocument,
    ProbabilityVector,
    TreeMeasure,
)

logger = logging.getLogger(__name__)

CONSISTENCY_TOLERANCE = 1e-12
DEDUPE_TOLERANCE = 1e-14


class ConditionalRule(ABC):
    """Chooses the conditional vector of a cell given child values and the cell value"""

    name = "rule"

    @abstractmethod
    def conditional(self, cell_id: str, child_values: Sequence[float], parent_value: float) -> ProbabilityVector:
        """`child_values` are in ascending order; the result follows that order"""


class BoltzmannRule(ConditionalRule):
    """Max-entropy conditional"""

    name = "boltzmann"

    def conditional(self, cell_id, child_values, parent_value):
        try:
            return solve_boltzmann(child_values, parent_value).distribution
        except InfeasibleConstraintError as e:
            raise InfeasibleRuleError(f"Cell '{cell_id}': {e}", cell_id) from e


class TwoPointRule(ConditionalRule):
    """Extreme conditional on a chosen support.

    `supports` maps cell ids to child positions (ascending order); a pair
    (i, i) or a single index selects a point mass. Cells missing from the
    table take their first enumerated extreme.
    """

    name = "two-point"

    def __init__(self, supports: Optional[Dict[str, Sequence[int]]] = None):
        self.supports = {cell_id: tuple(indices) for cell_id, indices in (supports or {}).items()}

    def conditional(self, cell_id, child_values, parent_value):
        values = [float(v) for v in child_values]
        indices = self.supports.get(cell_id)
        if indices is None:
            extremes = cell_extremes(values, parent_value)
            if not extremes:
                raise InfeasibleRuleError(f"Cell '{cell_id}' has no feasible extreme", cell_id)
            return ProbabilityVector(values=values, probs=extremes[0][1])
        if not 1 <= len(indices) <= 2 or any(not 0 <= i < len(values) for i in indices):
            raise InfeasibleRuleError(
                f"Cell '{cell_id}': support {list(indices)} is not one or two child positions "
                f"out of {len(values)}",
                cell_id,
            )
        probs = _two_point(values, parent_value, min(indices), max(indices))
        if probs is None:
            raise InfeasibleRuleError(
                f"Cell '{cell_id}': support {list(indices)} cannot reach mean {parent_value!r}",
                cell_id,
            )
        return ProbabilityVector(values=values, probs=probs)


class UniformFeasibleRule(ConditionalRule):
    """Feasible conditional closest to uniform in Euclidean distance.

    The optimum has the form p_i = max(0, mu + nu * a_i), so its support is
    a prefix or a suffix of the ascending children; each candidate support
    is solved exactly and the feasible one closest to uniform wins.
    """

    name = "uniform-feasible"

    def conditional(self, cell_id, child_values, parent_value):
        a = np.asarray(child_values, dtype=float)
        k = a.size
        scale = _scale(a)
        tol = Settings.FEASIBILITY_TOLERANCE * scale
        uniform = np.full(k, 1.0 / k)
        best = None
        candidates = {(0, k)}
        for cut in range(1, k):
            candidates.add((0, cut))
            candidates.add((cut, k))
        for start, stop in sorted(candidates):
            p = _affine_on_support(a, parent_value, start, stop)
            if p is None or np.any(p < -tol) or abs(float(p @ a) - parent_value) > tol:
                continue
            p = np.clip(p, 0.0, None)
            distance = float(np.sum((p - uniform) ** 2))
            if best is None or distance < best[0] - 1e-15:
                best = (distance, p)
        if best is None:
            raise InfeasibleRuleError(
                f"Cell '{cell_id}': mean {parent_value!r} is outside the child values", cell_id
            )
        return ProbabilityVector.from_weights(a, best[1])


class ExplicitRule(ConditionalRule):
    """User-supplied conditionals: {cell id: {child id: probability}}"""

    name = "explicit"

    def __init__(self, table: Dict[str, Dict[str, float]], tree: FiltrationTree):
        self.table = table
        self.tree = tree

    def conditional(self, cell_id, child_values, parent_value):
        row = self.table.get(cell_id)
        if row is None:
            raise InfeasibleRuleError(f"Cell '{cell_id}' has no explicit conditional", cell_id)
        children = self.tree.children_of(cell_id)
        unknown = sorted(set(row) - set(children))
        if unknown:
            raise InfeasibleRuleError(
                f"Cell '{cell_id}': explicit conditional names non-children {unknown}", cell_id
            )
        probs = [float(row.get(child, 0.0)) for child in children]
        try:
            return ProbabilityVector(values=[float(v) for v in child_values], probs=probs)
        except ValidationError as e:
            raise InfeasibleRuleError(
                f"Cell '{cell_id}': explicit conditional is not a probability vector "
                f"({e.errors()[0]['msg']})",
                cell_id,
            ) from e


def _scale(a: np.ndarray) -> float:
    return max(float(a.max() - a.min()), 1.0) if a.size else 1.0


def _affine_on_support(a: np.ndarray, mean: float, start: int, stop: int) -> Optional[np.ndarray]:
    """Solve p = mu + nu * a on a[start:stop], zero elsewhere, with sum 1 and mean `mean`"""
    support = a[start:stop]
    p = np.zeros_like(a)
    if support.size == 1:
        p[start] = 1.0
        return p
    n = support.size
    centered = support - support.mean()
    denominator = float(centered @ centered)
    if denominator == 0.0:
        return None
    nu = (mean - float(support.mean())) / denominator
    p[start:stop] = 1.0 / n + nu * centered
    return p


def _two_point(values: Sequence[float], mean: float, i: int, j: int) -> Optional[List[float]]:
    """Forced probabilities on support {i, j} (i == j for a point mass)"""
    k = len(values)
    scale = max(max(values) - min(values), 1.0)
    tol = Settings.FEASIBILITY_TOLERANCE * scale
    probs = [0.0] * k
    if i == j:
        if abs(values[i] - mean) > tol:
            return None
        probs[i] = 1.0
        return probs
    low, high = (i, j) if values[i] < values[j] else (j, i)
    a_low, a_high = values[low], values[high]
    if not a_low - tol <= mean <= a_high + tol:
        return None
    weight_high = min(max((mean - a_low) / (a_high - a_low), 0.0), 1.0)
    probs[low] = 1.0 - weight_high
    probs[high] = weight_high
    return probs


def cell_extremes(child_values: Sequence[float], parent_value: float) -> List[Tuple[Tuple[int, ...], List[float]]]:
    """Vertices of {p : sum p = 1, sum a_i p_i = a, p >= 0} for distinct ascending a_i.

    Point masses where a equals a child value, and pairs (i, j) with
    a_i < a < a_j, in lexicographic order of (i, j) (a point mass on i
    sorts as (i, i)). Duplicate vectors are dropped.
    """
    values = [float(v) for v in child_values]
    k = len(values)
    scale = max(max(values) - min(values), 1.0) if values else 1.0
    tol = 1e-12 * scale
    mean = float(parent_value)
    extremes: List[Tuple[Tuple[int, ...], List[float]]] = []
    for i in range(k):
        for j in range(i, k):
            if i == j:
                if abs(values[i] - mean) > tol:
                    continue
                probs = [0.0] * k
                probs[i] = 1.0
                support: Tuple[int, ...] = (i,)
            else:
                low, high = (i, j) if values[i] < values[j] else (j, i)
                if not values[low] + tol < mean < values[high] - tol:
                    continue
                probs = _two_point(values, mean, i, j)
                support = (i, j)
            if any(max(abs(x - y) for x, y in zip(probs, seen)) <= DEDUPE_TOLERANCE for _, seen in extremes):
                continue
            extremes.append((support, probs))
    return extremes


def convex_weights(extremes: Sequence[Sequence[float]], probs: Sequence[float]) -> Tuple[np.ndarray, float]:
    """Nonnegative weights w with sum w = 1 and sum w_e * extreme_e = probs.

    Returns (weights, residual norm) from nonnegative least squares.
    """
    vertices = np.asarray(extremes, dtype=float)
    target = np.asarray(probs, dtype=float)
    system = np.vstack([vertices.T, np.ones(len(vertices))])
    rhs = np.concatenate([target, [1.0]])
    weights, residual = nnls(system, rhs)
    return weights, float(residual)


def _check_feasible(cell_id: str, vector: ProbabilityVector, child_values: Sequence[float], parent_value: float) -> np.ndarray:
    probs = np.asarray(vector.probs, dtype=float)
    if len(probs) != len(child_values):
        raise InfeasibleRuleError(
            f"Cell '{cell_id}': rule returned {len(probs)} probabilities for {len(child_values)} children",
            cell_id,
        )
    values = np.asarray(child_values, dtype=float)
    tol = Settings.FEASIBILITY_TOLERANCE * _scale(values)
    achieved = float(probs @ values)
    if abs(achieved - parent_value) > tol:
        raise InfeasibleRuleError(
            f"Cell '{cell_id}': conditional mean {achieved!r} differs from cell value {parent_value!r}",
            cell_id,
        )
    return probs


def _root_probabilities(
    tree: FiltrationTree,
    rule: ConditionalRule,
    root_distribution: Optional[ProbabilityVector],
    root_value: Optional[float],
) -> np.ndarray:
    if root_distribution is None and root_value is not None:
        root_values = [tree.cells[r].value for r in tree.roots]
        vector = rule.conditional("<root>", root_values, float(root_value))
        return _check_feasible("<root>", vector, root_values, float(root_value))
    return _given_or_uniform_roots(tree, root_distribution)


def _given_or_uniform_roots(tree: FiltrationTree, root_distribution: Optional[ProbabilityVector]) -> np.ndarray:
    roots = tree.roots
    if root_distribution is None:
        return np.full(len(roots), 1.0 / len(roots))
    if root_distribution.k != len(roots):
        raise InfeasibleRuleError(
            f"Root distribution has {root_distribution.k} entries for {len(roots)} level-1 cells"
        )
    return np.asarray(root_distribution.probs, dtype=float)


def _propagate(tree: FiltrationTree, root_probs: np.ndarray, conditionals: Dict[str, np.ndarray]) -> TreeMeasure:
    """Forward recursion mass(Q_i) = p_i * mass(Q)"""
    masses: Dict[str, float] = {}
    for cell_id, p in zip(tree.roots, root_probs):
        masses[cell_id] = float(p)
    for cell_id in tree.internal_cells():
        parent_mass = masses[cell_id]
        for child, p in zip(tree.children[cell_id], conditionals[cell_id]):
            masses[child] = float(p) * parent_mass
    return TreeMeasure(tree_hash=tree_hash(tree), masses=masses)


def build_measure(
    tree: FiltrationTree,
    rule: ConditionalRule,
    root_distribution: Optional[ProbabilityVector] = None,
    root_value: Optional[float] = None,
) -> TreeMeasure:
    """Martingale measure whose conditionals are chosen by `rule`.

    Level-1 mass is `root_distribution` when given, else the rule applied
    to the level-1 values with mean `root_value` when given, else uniform.
    """
    report = envelope(tree)
    if not report.ok:
        first = report.violations[0]
        raise EnvelopeViolationError(
            f"Tree is not a measure-free martingale: cell '{first}' lies outside its children's range",
            first,
        )
    root_probs = _root_probabilities(tree, rule, root_distribution, root_value)
    conditionals: Dict[str, np.ndarray] = {}
    for cell_id in tree.internal_cells():
        pairs = children_values(tree, cell_id)
        values = [value for _, value in pairs]
        parent_value = tree.cells[cell_id].value
        vector = rule.conditional(cell_id, values, parent_value)
        conditionals[cell_id] = _check_feasible(cell_id, vector, values, parent_value)
    measure = _propagate(tree, root_probs, conditionals)
    logger.info(f"Built {rule.name} measure on {len(tree.cells)} cells")
    return measure


def boltzmann_measure(tree: FiltrationTree, **kwargs) -> TreeMeasure:
    """The unique measure whose every conditional maximizes entropy"""
    return build_measure(tree, BoltzmannRule(), **kwargs)


def consistency_error(tree: FiltrationTree, measure: TreeMeasure) -> float:
    """max(|sum of level-1 masses - 1|, max_Q |mass(Q) - sum of children masses|)"""
    worst = abs(math.fsum(measure.mass(r) for r in tree.roots) - 1.0)
    for cell_id in tree.internal_cells():
        total = math.fsum(measure.mass(child) for child in tree.children[cell_id])
        worst = max(worst, abs(measure.mass(cell_id) - total))
    return worst


def validate_measure(tree: FiltrationTree, measure: TreeMeasure) -> None:
    missing = sorted(set(tree.cells) - set(measure.masses))
    if missing:
        raise MeasureDocumentError(f"Measure has no mass for cell(s) {missing[:5]}")
    extra = sorted(set(measure.masses) - set(tree.cells))
    if extra:
        raise MeasureDocumentError(f"Measure names unknown cell(s) {extra[:5]}")
    for cell_id, mass in measure.masses.items():
        if not (-CONSISTENCY_TOLERANCE <= mass <= 1.0 + CONSISTENCY_TOLERANCE):
            raise MeasureDocumentError(f"Cell '{cell_id}' has mass {mass!r} outside [0, 1]")
    error = consistency_error(tree, measure)
    if error > CONSISTENCY_TOLERANCE:
        raise MeasureDocumentError(f"Measure is not consistent across levels (error {error!r})")


def check_martingale(tree: FiltrationTree, measure: TreeMeasure) -> MartingaleReport:
    """|sum_children f(Q') mass(Q') - f(Q) mass(Q)| for every non-leaf Q of positive mass"""
    records: List[MartingaleRecord] = []
    skipped: List[str] = []
    for cell_id in tree.internal_cells():
        mass = measure.mass(cell_id)
        if mass <= 0.0:
            skipped.append(cell_id)
            continue
        expectation = math.fsum(tree.cells[c].value * measure.mass(c) for c in tree.children[cell_id])
        error = abs(expectation - tree.cells[cell_id].value * mass)
        records.append(MartingaleRecord(cell_id=cell_id, level=tree.cells[cell_id].level, error=error))
    return MartingaleReport(
        max_error=max((r.error for r in records), default=0.0),
        consistency_error=consistency_error(tree, measure),
        records=records,
        skipped=skipped,
    )


def conditional_of(tree: FiltrationTree, measure: TreeMeasure, cell_id: str) -> Optional[List[float]]:
    """mass(child)/mass(cell) in ascending child order, None on zero-mass cells"""
    mass = measure.mass(cell_id)
    if mass <= 0.0:
        return None
    return [measure.mass(child) / mass for child in tree.children_of(cell_id)]


def count_extremes(tree: FiltrationTree) -> int:
    """Exact number of extreme measures: product of per-cell vertex counts"""
    total = 1
    for cell_id in tree.internal_cells():
        values = [value for _, value in children_values(tree, cell_id)]
        total *= len(cell_extremes(values, tree.cells[cell_id].value))
    return total


def enumerate_extremes(
    tree: FiltrationTree,
    cap: int,
    root_distribution: Optional[ProbabilityVector] = None,
) -> Iterator[Tuple[ExtremeSpec, TreeMeasure]]:
    """Lazily yield up to `cap` extreme measures (Cartesian product over cells)"""
    if cap <= 0:
        raise ValueError(f"cap must be positive, got {cap}")
    report = envelope(tree)
    if not report.ok:
        first = report.violations[0]
        raise EnvelopeViolationError(f"Cell '{first}' lies outside its children's range", first)

    internal = list(tree.internal_cells())
    per_cell = []
    for cell_id in internal:
        values = [value for _, value in children_values(tree, cell_id)]
        per_cell.append(cell_extremes(values, tree.cells[cell_id].value))
    root_probs = _given_or_uniform_roots(tree, root_distribution)

    for index, combination in enumerate(itertools.islice(itertools.product(*per_cell), cap)):
        supports: Dict[str, CellSupport] = {}
        conditionals: Dict[str, np.ndarray] = {}
        for cell_id, (indices, probs) in zip(internal, combination):
            children = tree.children[cell_id]
            supports[cell_id] = CellSupport(
                cell_id=cell_id,
                indices=indices,
                child_ids=[children[i] for i in indices],
                probs=probs,
            )
            conditionals[cell_id] = np.asarray(probs, dtype=float)
        yield ExtremeSpec(index=index, supports=supports), _propagate(tree, root_probs, conditionals)


def equivalence_bounds(tree: FiltrationTree, m: TreeMeasure, p: TreeMeasure) -> EquivalenceReport:
    """Ratio bounds C <= m(Q)/p(Q) <= D over cells with p(Q) > 0"""
    ratios: List[float] = []
    offending: List[str] = []
    for level in tree.levels:
        for cell_id in level:
            m_mass, p_mass = m.mass(cell_id), p.mass(cell_id)
            if (m_mass > 0.0) != (p_mass > 0.0):
                offending.append(cell_id)
            if p_mass > 0.0:
                ratios.append(m_mass / p_mass)
    return EquivalenceReport(
        lower_ratio=min(ratios) if ratios else math.nan,
        upper_ratio=max(ratios) if ratios else math.nan,
        equivalent=not offending,
        offending=offending,
    )


def measure_entropy_profile(tree: FiltrationTree, measure: TreeMeasure) -> EntropyProfile:
    """Entropy of each positive-mass cell's conditional, plus the entropy of the atoms"""
    records: List[CellEntropy] = []
    for cell_id in tree.internal_cells():
        conditional = conditional_of(tree, measure, cell_id)
        if conditional is None:
            continue
        values = [tree.cells[c].value for c in tree.children[cell_id]]
        vector = ProbabilityVector.from_weights(values, conditional)
        records.append(
            CellEntropy(
                cell_id=cell_id,
                level=tree.cells[cell_id].level,
                entropy=entropy(vector),
                support_size=sum(1 for q in conditional if q > 0.0),
                max_entropy=math.log(len(values)),
            )
        )
    atoms = tree.atoms()
    atom_masses = [max(measure.mass(a), 0.0) for a in atoms]
    total = entropy(ProbabilityVector.from_weights([tree.cells[a].value for a in atoms], atom_masses))
    entropies = [r.entropy for r in records]
    return EntropyProfile(
        records=records,
        total_entropy=total,
        min_entropy=min(entropies) if entropies else None,
        max_entropy=max(entropies) if entropies else None,
        mean_entropy=math.fsum(entropies) / len(entropies) if entropies else None,
    )


def dump_measure(tree: FiltrationTree, measure: TreeMeasure) -> Dict[str, Any]:
    """Measure document, masses sorted by (level, id)"""
    ordered = sorted(tree.cells.values(), key=lambda cell: (cell.level, cell.id))
    return {
        "tree_hash": measure.tree_hash,
        "masses": [{"id": cell.id, "mass": measure.mass(cell.id)} for cell in ordered],
    }


def load_measure(document: Any, tree: FiltrationTree) -> TreeMeasure:
    """Parse a measure document and check it belongs to `tree`"""
    try:
        parsed = MeasureDocument.model_validate(document)
    except ValidationError as e:
        raise MeasureDocumentError(f"Measure document does not match the measure format: {e}") from e
    expected = tree_hash(tree)
    if parsed.tree_hash != expected:
        raise MeasureDocumentError(
            f"Measure belongs to tree {parsed.tree_hash[:16]}..., not {expected[:16]}..."
        )
    masses: Dict[str, float] = {}
    for record in parsed.masses:
        if record.id in masses:
            raise MeasureDocumentError(f"Duplicate mass for cell '{record.id}'")
        masses[record.id] = record.mass
    measure = TreeMeasure(tree_hash=expected, masses=masses)
    validate_measure(tree, measure)
    return measure
