"""Study configuration and the CSV reports emitted by the study commands"""

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, List, Sequence

from src.models import ConvergenceReport, NetStudy

logger = logging.getLogger(__name__)

CONVERGENCE_COLUMNS = ["n", "max_osc", "bound", "within_bound"]
ATOM_COLUMNS = ["atom_id", "n", "value", "osc"]
NETSTUDY_COLUMNS = [
    "epsilon",
    "net_size",
    "lambda",
    "mean",
    "entropy",
    "kolmogorov_prev",
    "wasserstein1_prev",
    "cross_kolmogorov",
    "cross_wasserstein1",
    "jitter_nets",
]
BOUND_SLACK = 1e-12


@dataclass
class StudyConfig:
    """Defaults for the converge and netstudy commands; CLI flags win"""
    eps_sequence: List[float] = field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025])
    jitter_nets: int = 2
    increment_bound: float = 1.0
    decay_ratio: float = 0.5
    branching: int = 2
    depth: int = 12
    max_workers: int = 4


def load_config_from_file(config_file: str) -> StudyConfig:
    """Load study configuration from JSON file"""
    if not Path(config_file).exists():
        logger.debug(f"No config file at {config_file}, using defaults")
        return StudyConfig()
    try:
        with open(config_file, 'r') as f:
            config_data = json.load(f)
        return StudyConfig(**config_data)
    except Exception as e:
        logger.error(f"Failed to load config from {config_file}: {e}")
        return StudyConfig()


def create_default_config(config_file: str = "study_config.json") -> StudyConfig:
    """Create a default configuration file"""
    default_config = StudyConfig()
    with open(config_file, 'w') as f:
        json.dump(asdict(default_config), f, indent=2)
        f.write("\n")
    logger.info(f"Created default configuration file: {config_file}")
    return default_config


def read_sample(path: str) -> List[float]:
    """Sorted sample from a JSON array, a {"sample": [...]} object, or plain numbers.

    Plain text may separate numbers by whitespace or commas.
    """
    with open(path, 'r') as f:
        text = f.read()
    try:
        data: Any = json.loads(text)
    except json.JSONDecodeError:
        data = [token for token in text.replace(",", " ").split() if token]
    if isinstance(data, dict):
        data = data.get("sample")
    if not isinstance(data, list):
        raise ValueError(f"{path}: expected a list of numbers")
    try:
        sample = [float(x) for x in data]
    except (TypeError, ValueError) as e:
        raise ValueError(f"{path}: sample entries must be numbers ({e})") from e
    if not sample:
        raise ValueError(f"{path}: sample is empty")
    if not all(math.isfinite(x) for x in sample):
        raise ValueError(f"{path}: sample entries must be finite")
    return sorted(sample)


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "+inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def _to_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(value) for value in row])
    return buffer.getvalue()


def convergence_csv(report: ConvergenceReport, per_atom: bool = False) -> str:
    """Summary table (one row per level) or long per-atom table"""
    if per_atom:
        rows = (
            (path.atom_id, n, value, osc)
            for path in report.atoms
            for n, (value, osc) in enumerate(zip(path.values, path.osc), start=1)
        )
        return _to_csv(ATOM_COLUMNS, rows)

    summary = []
    for n, osc in enumerate(report.max_osc, start=1):
        bound = report.bound[n - 1] if report.bound is not None else None
        within = osc <= bound + BOUND_SLACK if bound is not None else None
        summary.append((n, osc, bound, within))
    return _to_csv(CONVERGENCE_COLUMNS, summary)


def netstudy_csv(study: NetStudy) -> str:
    rows = (
        (
            row.epsilon,
            row.net_size,
            row.lambda_,
            row.mean,
            row.entropy,
            row.kolmogorov_prev,
            row.wasserstein1_prev,
            row.cross_kolmogorov,
            row.cross_wasserstein1,
            row.jitter_nets,
        )
        for row in study.rows
    )
    return _to_csv(NETSTUDY_COLUMNS, rows)
