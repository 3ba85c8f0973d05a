import hashlib
import json
import logging
import math
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple

from pydantic import ValidationError

from src.exceptions import (
    EmptyLevelError,
    LeafCellError,
    SiblingValueCollisionError,
    StructuralError,
    TreeDocumentError,
)
from src.models import Cell, EnvelopeRecord, EnvelopeReport, FiltrationTree, TreeDocument
from src.serialization import read_json

logger = logging.getLogger(__name__)


def build_tree(depth: int, cells: Iterable[Cell]) -> FiltrationTree:
    """Validate cells and assemble an immutable FiltrationTree.

    Raises a TreeValidationError subclass naming the offending cell.
    """
    if depth < 1:
        raise StructuralError(f"Tree depth must be at least 1, got {depth}")

    by_id: Dict[str, Cell] = {}
    for cell in cells:
        if cell.id in by_id:
            raise StructuralError(f"Duplicate cell id '{cell.id}'", cell.id)
        if not math.isfinite(cell.value):
            raise StructuralError(f"Cell '{cell.id}' has non-finite value {cell.value!r}", cell.id)
        if not 1 <= cell.level <= depth:
            raise StructuralError(
                f"Cell '{cell.id}' has level {cell.level} outside 1..{depth}", cell.id
            )
        by_id[cell.id] = cell

    children: Dict[str, List[str]] = {cell_id: [] for cell_id in by_id}
    roots: List[str] = []
    for cell in by_id.values():
        if cell.level == 1:
            if cell.parent is not None:
                raise StructuralError(f"Level-1 cell '{cell.id}' must not have a parent", cell.id)
            roots.append(cell.id)
            continue
        if cell.parent is None:
            raise StructuralError(f"Cell '{cell.id}' at level {cell.level} has no parent", cell.id)
        parent = by_id.get(cell.parent)
        if parent is None:
            raise StructuralError(
                f"Cell '{cell.id}' names unknown parent '{cell.parent}' (orphan)", cell.id
            )
        if parent.level != cell.level - 1:
            raise StructuralError(
                f"Cell '{cell.id}' at level {cell.level} has parent '{parent.id}' "
                f"at level {parent.level} (level gap)",
                cell.id,
            )
        children[parent.id].append(cell.id)

    if not roots:
        raise EmptyLevelError("Level 1 has no cells")

    def ordered(ids: List[str], owner: Optional[str]) -> List[str]:
        ids = sorted(ids, key=lambda cid: (by_id[cid].value, cid))
        for left, right in zip(ids, ids[1:]):
            if by_id[left].value == by_id[right].value:
                where = f"under '{owner}'" if owner else "at level 1"
                raise SiblingValueCollisionError(
                    f"Cells '{left}' and '{right}' {where} share value {by_id[right].value!r}",
                    right,
                )
        return ids

    levels = [ordered(roots, None)]
    for level in range(1, depth):
        next_level: List[str] = []
        for cell_id in levels[-1]:
            if not children[cell_id]:
                raise EmptyLevelError(
                    f"Cell '{cell_id}' at level {level} has no children but depth is {depth}",
                    cell_id,
                )
            children[cell_id] = ordered(children[cell_id], cell_id)
            next_level.extend(children[cell_id])
        levels.append(next_level)

    tree = FiltrationTree(depth=depth, cells=by_id, levels=levels, children=children)
    logger.debug(f"Built tree of depth {depth} with {len(by_id)} cells")
    return tree


def load_tree(document: Any) -> FiltrationTree:
    """Parse and validate a JSON tree document (already decoded)"""
    try:
        parsed = TreeDocument.model_validate(document)
    except ValidationError as e:
        raise TreeDocumentError(f"Tree document does not match the tree format: {e}") from e
    cells = []
    for record in parsed.cells:
        if record.level < 1:
            raise StructuralError(
                f"Cell '{record.id}' has level {record.level}; levels start at 1", record.id
            )
        cells.append(Cell(id=record.id, level=record.level, parent=record.parent, value=record.value))
    return build_tree(parsed.depth, cells)


def load_tree_file(path: str) -> FiltrationTree:
    return load_tree(read_json(path))


def dump_tree(tree: FiltrationTree) -> Dict[str, Any]:
    """Canonical tree document, cells sorted by (level, id)"""
    cells = sorted(tree.cells.values(), key=lambda cell: (cell.level, cell.id))
    return {
        "depth": tree.depth,
        "cells": [
            {"id": cell.id, "level": cell.level, "parent": cell.parent, "value": cell.value}
            for cell in cells
        ],
    }


def tree_hash(tree: FiltrationTree) -> str:
    """sha256 of the canonical compact tree document"""
    canonical = json.dumps(dump_tree(tree), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def children_values(tree: FiltrationTree, cell_id: str) -> List[Tuple[str, float]]:
    """(child id, value) pairs of a non-leaf cell in ascending value order"""
    if tree.is_leaf(cell_id):
        raise LeafCellError(cell_id)
    return [(child, tree.cells[child].value) for child in tree.children[cell_id]]


def envelope_of(
    tree: FiltrationTree,
    value_of: Callable[[str], float],
    exclude: Iterable[str] = (),
    depth: Optional[int] = None,
) -> EnvelopeReport:
    """Envelope check of an arbitrary tree-indexed function.

    Cells in `exclude` are neither checked nor used as children; a cell
    whose children are all excluded is skipped.
    """
    excluded = set(exclude)
    depth = tree.depth if depth is None else depth
    records: List[EnvelopeRecord] = []
    for level_ids in tree.levels[: depth - 1]:
        for cell_id in level_ids:
            if cell_id in excluded:
                continue
            child_values = [value_of(c) for c in tree.children[cell_id] if c not in excluded]
            if not child_values:
                continue
            value = value_of(cell_id)
            lower, upper = min(child_values), max(child_values)
            records.append(
                EnvelopeRecord(
                    cell_id=cell_id,
                    level=tree.cells[cell_id].level,
                    min_child=lower,
                    max_child=upper,
                    value=value,
                    ok=lower <= value <= upper,
                )
            )
    violations = [record.cell_id for record in records if not record.ok]
    return EnvelopeReport(
        records=records,
        ok=not violations,
        violations=violations,
        excluded=sorted(excluded),
    )


def envelope(tree: FiltrationTree) -> EnvelopeReport:
    """Measure-free martingale check: m_n(Q) <= f_n(Q) <= M_n(Q) for every non-leaf Q"""
    report = envelope_of(tree, tree.value)
    if not report.ok:
        logger.info(f"Envelope violated at {len(report.violations)} cell(s), first '{report.violations[0]}'")
    return report
