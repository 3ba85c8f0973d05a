import logging
import os
from unittest.mock import patch

import numpy as np
import pytest

from src.filtration import build_tree
from src.models import Cell


# Pin the numerical settings for tests
@pytest.fixture(autouse=True)
def set_test_env():
    with patch.dict(os.environ, {
        "MFM_SOLVER_TOLERANCE": "1e-12",
        "MFM_SOLVER_MAX_ITERATIONS": "200",
        "MFM_FEASIBILITY_TOLERANCE": "1e-10",
        "MFM_EXTREME_CAP": "1000",
        "MFM_MAX_WORKERS": "2",
        "MFM_LOG_LEVEL": "WARNING",
    }):
        yield


# CLI tests call setup_logging; its handlers must not outlive the captured stderr
@pytest.fixture(autouse=True)
def reset_package_logger():
    yield
    logger = logging.getLogger("src")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
    logger.setLevel(logging.NOTSET)


def _children(rng, parent, k, boundary_probability):
    """k distinct rounded values whose [min, max] contains parent"""
    if k == 1:
        return [parent]
    while True:
        offsets = rng.uniform(-1.0, 1.0, size=k)
        offsets[0] = -abs(offsets[0])
        offsets[1] = abs(offsets[1])
        if rng.random() < boundary_probability:
            # parent sits on the smallest child
            offsets = np.abs(offsets)
            offsets[0] = 0.0
        values = [round(parent + float(o), 6) for o in offsets]
        if len(set(values)) == k:
            return sorted(values)


def make_random_tree(rng, depth, max_branching, boundary_probability=0.1, roots=1):
    """Random measure-free tree; some cells sit on an end of their children's range"""
    root_values = sorted(set(round(float(v), 6) for v in rng.uniform(-2.0, 2.0, size=roots)))
    cells = [Cell(id=f"r{i}", level=1, value=v) for i, v in enumerate(root_values)]
    frontier = list(cells)
    for level in range(2, depth + 1):
        next_frontier = []
        for node in frontier:
            k = int(rng.integers(1, max_branching + 1))
            for j, value in enumerate(_children(rng, node.value, k, boundary_probability)):
                child = Cell(id=f"{node.id}.{j}", level=level, parent=node.id, value=value)
                next_frontier.append(child)
        cells.extend(next_frontier)
        frontier = next_frontier
    return build_tree(depth, cells)


@pytest.fixture
def random_tree_factory():
    return make_random_tree


@pytest.fixture
def binomial_doc():
    """Root 1 with children 0.5 and 2, each split again by factors 0.5 and 2"""
    return {
        "depth": 3,
        "cells": [
            {"id": "s", "level": 1, "parent": None, "value": 1.0},
            {"id": "s.d", "level": 2, "parent": "s", "value": 0.5},
            {"id": "s.u", "level": 2, "parent": "s", "value": 2.0},
            {"id": "s.d.d", "level": 3, "parent": "s.d", "value": 0.25},
            {"id": "s.d.u", "level": 3, "parent": "s.d", "value": 1.0},
            {"id": "s.u.d", "level": 3, "parent": "s.u", "value": 1.0},
            {"id": "s.u.u", "level": 3, "parent": "s.u", "value": 4.0},
        ],
    }


@pytest.fixture
def three_children_doc():
    """Single cell with value 1 over children 0, 1, 2"""
    return {
        "depth": 2,
        "cells": [
            {"id": "q", "level": 1, "parent": None, "value": 1.0},
            {"id": "a", "level": 2, "parent": "q", "value": 0.0},
            {"id": "b", "level": 2, "parent": "q", "value": 1.0},
            {"id": "c", "level": 2, "parent": "q", "value": 2.0},
        ],
    }


@pytest.fixture
def counterexample_doc():
    """Root value 3 above both children: not a measure-free martingale"""
    return {
        "depth": 2,
        "cells": [
            {"id": "root", "level": 1, "parent": None, "value": 3.0},
            {"id": "lo", "level": 2, "parent": "root", "value": 0.0},
            {"id": "hi", "level": 2, "parent": "root", "value": 1.0},
        ],
    }
