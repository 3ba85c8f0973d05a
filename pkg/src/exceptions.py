from typing import Optional, Tuple


class MartingaleToolkitError(Exception):
    """Base class for errors raised by the toolkit"""


class TreeValidationError(MartingaleToolkitError, ValueError):
    """A tree document or tree violates the filtration invariants"""

    def __init__(self, message: str, cell_id: Optional[str] = None):
        super().__init__(message)
        self.cell_id = cell_id


class TreeDocumentError(TreeValidationError):
    """Document does not match the JSON tree format"""


class StructuralError(TreeValidationError):
    """Orphan cell, level gap, duplicate id or non-finite value"""


class SiblingValueCollisionError(TreeValidationError):
    """Two cells with the same parent carry the same value"""


class EmptyLevelError(TreeValidationError):
    """A level has no cells, or a non-leaf cell has no children"""


class UnknownCellError(MartingaleToolkitError, LookupError):
    def __init__(self, cell_id: str):
        super().__init__(f"Unknown cell '{cell_id}'")
        self.cell_id = cell_id


class LeafCellError(MartingaleToolkitError, ValueError):
    def __init__(self, cell_id: str):
        super().__init__(f"Cell '{cell_id}' is a leaf and has no children")
        self.cell_id = cell_id


class InfeasibleConstraintError(MartingaleToolkitError, ValueError):
    """Target mean lies outside the range of the values"""


class ConvergenceError(MartingaleToolkitError, RuntimeError):
    """Root finder hit its iteration cap"""

    def __init__(self, message: str, bracket: Tuple[float, float], iterations: int):
        super().__init__(message)
        self.bracket = bracket
        self.iterations = iterations


class EnvelopeViolationError(MartingaleToolkitError, ValueError):
    """Tree is not a measure-free martingale"""

    def __init__(self, message: str, cell_id: str):
        super().__init__(message)
        self.cell_id = cell_id


class InfeasibleRuleError(MartingaleToolkitError, ValueError):
    """A conditional rule returned (or could not return) a feasible vector"""

    def __init__(self, message: str, cell_id: Optional[str] = None):
        super().__init__(message)
        self.cell_id = cell_id


class MeasureDocumentError(MartingaleToolkitError, ValueError):
    """Measure document does not belong to the tree or breaks consistency"""
