"""Deterministic JSON text and output plumbing.

Same inputs give byte-identical output: keys are sorted, floats use
repr, and non-finite floats become the strings "+inf", "-inf", "nan".
"""

import json
import math
import sys
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel


def jsonable(obj: Any) -> Any:
    """Convert models, tuples and non-finite floats into plain JSON data"""
    if isinstance(obj, BaseModel):
        return jsonable(obj.model_dump(by_alias=True))
    if isinstance(obj, dict):
        return {str(key): jsonable(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(value) for value in obj]
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "+inf" if obj > 0 else "-inf"
        return obj
    return obj


def to_json(obj: Any, indent: Optional[int] = 2) -> str:
    """Serialize to JSON with deterministic key ordering"""
    return json.dumps(jsonable(obj), sort_keys=True, indent=indent, allow_nan=False)


def read_json(path: str) -> Any:
    with open(path, 'r') as f:
        return json.load(f)


def write_output(text: str, out: Optional[str] = None) -> None:
    """Write to `out` when given, otherwise to stdout"""
    if not text.endswith("\n"):
        text += "\n"
    if out:
        path = Path(out)
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as f:
            f.write(text)
    else:
        sys.stdout.write(text)
