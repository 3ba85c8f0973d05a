import math
from typing import Dict, Iterator, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.exceptions import UnknownCellError

PROBABILITY_SUM_TOLERANCE = 1e-12


class CellRecord(BaseModel):
    """One entry of the `cells` array of a tree document"""
    id: str = Field(..., min_length=1, strict=True)
    level: int = Field(..., strict=True)
    parent: Optional[str] = Field(..., strict=True)
    value: float = Field(..., strict=True)


class TreeDocument(BaseModel):
    """JSON tree format: {"depth": N, "cells": [...]}"""
    depth: int = Field(..., strict=True)
    cells: List[CellRecord]


class Cell(BaseModel):
    """A block Q of the level-n partition together with the constant f_n(Q)"""
    model_config = ConfigDict(frozen=True)

    id: str
    level: int = Field(..., ge=1)
    parent: Optional[str] = None
    value: float


class FiltrationTree(BaseModel):
    """Finite filtration tree; build it with `src.filtration.build_tree` or `load_tree`."""
    model_config = ConfigDict(frozen=True)

    depth: int = Field(..., ge=1)
    cells: Dict[str, Cell]
    levels: List[List[str]] = Field(..., description="Level-n cell ids, level 1 first")
    children: Dict[str, List[str]] = Field(..., description="Child ids in ascending value order")

    def cell(self, cell_id: str) -> Cell:
        try:
            return self.cells[cell_id]
        except KeyError:
            raise UnknownCellError(cell_id) from None

    def value(self, cell_id: str) -> float:
        return self.cell(cell_id).value

    def children_of(self, cell_id: str) -> List[str]:
        self.cell(cell_id)
        return self.children.get(cell_id, [])

    def is_leaf(self, cell_id: str) -> bool:
        return self.cell(cell_id).level == self.depth

    def ancestors(self, cell_id: str) -> List[str]:
        """Chain of cell ids from the level-1 ancestor down to `cell_id`"""
        chain = [cell_id]
        parent = self.cell(cell_id).parent
        while parent is not None:
            chain.append(parent)
            parent = self.cells[parent].parent
        chain.reverse()
        return chain

    @property
    def roots(self) -> List[str]:
        return self.levels[0]

    def atoms(self) -> List[str]:
        return self.levels[-1]

    def internal_cells(self) -> Iterator[str]:
        """Non-leaf cells in level order"""
        for level in self.levels[:-1]:
            yield from level


class EnvelopeRecord(BaseModel):
    cell_id: str
    level: int
    min_child: float
    max_child: float
    value: float
    ok: bool


class EnvelopeReport(BaseModel):
    """Per-cell check of min f_{n+1} <= f_n(Q) <= max f_{n+1} over the children of Q"""
    records: List[EnvelopeRecord] = Field(default_factory=list)
    ok: bool = True
    violations: List[str] = Field(default_factory=list)
    excluded: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_ok(self) -> "EnvelopeReport":
        if self.ok != all(record.ok for record in self.records):
            raise ValueError("ok must hold exactly when every record is ok")
        return self


class ProbabilityVector(BaseModel):
    """Weights p_1..p_k over the ordered values x_1..x_k"""
    values: List[float]
    probs: List[float]

    @model_validator(mode="after")
    def _check_probabilities(self) -> "ProbabilityVector":
        if not self.values:
            raise ValueError("probability vector needs at least one value")
        if len(self.values) != len(self.probs):
            raise ValueError(
                f"values and probs differ in length ({len(self.values)} != {len(self.probs)})"
            )
        if any(p < 0 for p in self.probs):
            raise ValueError("probabilities must be nonnegative")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > PROBABILITY_SUM_TOLERANCE:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        return self

    @classmethod
    def from_weights(cls, values, weights) -> "ProbabilityVector":
        """Normalize nonnegative weights (tiny negative round-off is clipped)"""
        weights = np.clip(np.asarray(weights, dtype=float), 0.0, None)
        total = weights.sum()
        if total <= 0:
            raise ValueError("weights must have positive total mass")
        return cls(values=[float(v) for v in values], probs=(weights / total).tolist())

    @property
    def k(self) -> int:
        return len(self.values)

    def mean(self) -> float:
        return math.fsum(x * p for x, p in zip(self.values, self.probs))


class BoltzmannSolution(BaseModel):
    """Max-entropy vector for a mean constraint and the tilt that produces it"""
    model_config = ConfigDict(populate_by_name=True)

    distribution: ProbabilityVector
    lambda_: float = Field(..., alias="lambda", description="finite, or -inf / +inf at boundary targets")
    mean: float
    variance: float = Field(..., ge=0)
    entropy: float = Field(..., ge=0)
    iterations: int = 0
    residual: float = 0.0
    degenerate: bool = False


class TreeMeasure(BaseModel):
    """Mass on every cell of a tree, consistent across levels"""
    model_config = ConfigDict(frozen=True)

    tree_hash: str
    masses: Dict[str, float]

    def mass(self, cell_id: str) -> float:
        try:
            return self.masses[cell_id]
        except KeyError:
            raise UnknownCellError(cell_id) from None


class CellSupport(BaseModel):
    """Extreme conditional of one cell: support of size one or two"""
    cell_id: str
    indices: Tuple[int, ...] = Field(..., description="Positions in the ascending child order")
    child_ids: List[str]
    probs: List[float] = Field(..., description="Full conditional over all children")


class ExtremeSpec(BaseModel):
    index: int
    supports: Dict[str, CellSupport]


class MartingaleRecord(BaseModel):
    cell_id: str
    level: int
    error: float


class MartingaleReport(BaseModel):
    max_error: float = 0.0
    consistency_error: float = 0.0
    records: List[MartingaleRecord] = Field(default_factory=list)
    skipped: List[str] = Field(default_factory=list, description="Zero-mass cells")


class EquivalenceReport(BaseModel):
    lower_ratio: float = Field(..., description="C = min m(Q)/p(Q) over cells with p(Q) > 0")
    upper_ratio: float = Field(..., description="D = max m(Q)/p(Q) over cells with p(Q) > 0")
    equivalent: bool
    offending: List[str] = Field(default_factory=list)

    @property
    def certified(self) -> bool:
        """Equivalence plus 0 < C <= D < inf"""
        return self.equivalent and self.lower_ratio > 0 and math.isfinite(self.upper_ratio)


class CellEntropy(BaseModel):
    cell_id: str
    level: int
    entropy: float
    support_size: int
    max_entropy: float


class EntropyProfile(BaseModel):
    records: List[CellEntropy] = Field(default_factory=list)
    total_entropy: float = 0.0
    min_entropy: Optional[float] = None
    max_entropy: Optional[float] = None
    mean_entropy: Optional[float] = None


class EquicontinuousSpec(BaseModel):
    """Finite surrogate for an equicontinuous martingale of continuous functions"""
    depth: int = Field(..., ge=1)
    increment_bound: float = Field(..., gt=0, description="c")
    decay_ratio: float = Field(..., gt=0, lt=1, description="r")
    branching: int = Field(..., ge=1)
    seed: int
    root_value: float = 0.0

    def increment(self, level: int) -> float:
        """Half-width c * r**n of the window for children of a level-n cell"""
        return self.increment_bound * self.decay_ratio ** level

    def tail_bound(self, level: int) -> float:
        """c * r**n / (1 - r)"""
        return self.increment(level) / (1.0 - self.decay_ratio)


class AtomPath(BaseModel):
    atom_id: str
    values: List[float]
    osc: List[float]
    rate: Optional[float] = None
    scale: Optional[float] = None


class ConvergenceReport(BaseModel):
    depth: int
    atoms: List[AtomPath]
    max_osc: List[float]
    bound: Optional[List[float]] = None
    within_bound: Optional[bool] = None
    rate: Optional[float] = None
    scale: Optional[float] = None


class NetDistribution(BaseModel):
    """Boltzmann distribution on an epsilon-net of a compact set"""
    model_config = ConfigDict(populate_by_name=True)

    support: List[float]
    probs: ProbabilityVector
    epsilon: Optional[float] = None
    alpha: float
    lambda_: float = Field(..., alias="lambda")

    @model_validator(mode="after")
    def _check_net(self) -> "NetDistribution":
        if self.support != self.probs.values:
            raise ValueError("support and probability values differ")
        if any(b <= a for a, b in zip(self.support, self.support[1:])):
            raise ValueError("support must be strictly increasing")
        scale = max(1.0, self.support[-1] - self.support[0])
        if abs(self.probs.mean() - self.alpha) > 1e-10 * scale:
            raise ValueError(f"mean {self.probs.mean()!r} misses alpha {self.alpha!r}")
        return self


class DistanceReport(BaseModel):
    kolmogorov: float = Field(..., ge=0)
    wasserstein1: float = Field(..., ge=0)


class NetStudyRow(BaseModel):
    epsilon: float
    net_size: int
    lambda_: float = Field(..., alias="lambda")
    mean: float
    entropy: float
    kolmogorov_prev: Optional[float] = None
    wasserstein1_prev: Optional[float] = None
    cross_kolmogorov: Optional[float] = None
    cross_wasserstein1: Optional[float] = None
    jitter_nets: int = 0

    model_config = ConfigDict(populate_by_name=True)


class NetStudy(BaseModel):
    alpha: float
    sample_size: int
    rows: List[NetStudyRow]


class LambdaField(BaseModel):
    """g_n: the Boltzmann tilt of every non-leaf cell"""
    depth: int
    values: Dict[str, float]
    infinite_cells: List[str] = Field(default_factory=list)


class LatticeSpec(BaseModel):
    """Multiplicative binomial/trinomial price lattice"""
    kind: Literal["binomial", "trinomial"] = "binomial"
    levels: int = Field(..., ge=1, description="Number of steps; the tree has levels + 1 levels")
    s0: float = Field(..., gt=0)
    up: float = Field(..., gt=0)
    down: float = Field(..., gt=0)
    middle: Optional[float] = Field(
        default=None, gt=0, description="Trinomial only; defaults to 1 when d < 1 < u, else sqrt(u * d)"
    )

    @model_validator(mode="after")
    def _check_factors(self) -> "LatticeSpec":
        if self.down >= self.up:
            raise ValueError(f"down factor {self.down} must be below up factor {self.up}")
        if self.kind == "trinomial":
            if self.middle is None:
                self.middle = 1.0 if self.down < 1.0 < self.up else math.sqrt(self.up * self.down)
            if not self.down < self.middle < self.up:
                raise ValueError(f"middle factor {self.middle} must lie strictly between down and up")
        elif self.middle is not None:
            raise ValueError("binomial lattices take no middle factor")
        return self

    @property
    def brackets(self) -> bool:
        """Children bracket their parent exactly when d <= 1 <= u"""
        return self.down <= 1.0 <= self.up

    def factors(self) -> List[Tuple[str, float]]:
        if self.kind == "trinomial":
            return [("d", self.down), ("m", self.middle), ("u", self.up)]
        return [("d", self.down), ("u", self.up)]


class MassRecord(BaseModel):
    id: str = Field(..., min_length=1)
    mass: float


class MeasureDocument(BaseModel):
    tree_hash: str
    masses: List[MassRecord]
