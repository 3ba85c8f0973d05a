import logging
from typing import List

from src.filtration import build_tree
from src.models import Cell, FiltrationTree, LatticeSpec

logger = logging.getLogger(__name__)


def generate_lattice(spec: LatticeSpec) -> FiltrationTree:
    """Non-recombining price tree: every node S has children S*d (, S*m), S*u.

    Ids spell the path from the root: "s", "s.d", "s.u.m", ...
    The tree has spec.levels + 1 levels.
    """
    if not spec.brackets:
        logger.warning(
            f"Lattice factors d={spec.down}, u={spec.up} do not bracket 1; "
            f"the tree will not be a measure-free martingale"
        )
    factors = spec.factors()
    cells: List[Cell] = [Cell(id="s", level=1, parent=None, value=spec.s0)]
    frontier = [cells[0]]
    for level in range(2, spec.levels + 2):
        next_frontier = []
        for node in frontier:
            for label, factor in factors:
                child = Cell(id=f"{node.id}.{label}", level=level, parent=node.id, value=node.value * factor)
                cells.append(child)
                next_frontier.append(child)
        frontier = next_frontier
    logger.info(f"Generated {spec.kind} lattice with {len(cells)} cells")
    return build_tree(spec.levels + 1, cells)
