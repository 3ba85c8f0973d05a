import logging
import os
from typing import Optional

from dotenv import load_dotenv

logger = logging.getLogger(__name__)


def _env_float(name: str, default: float) -> float:
    try:
        return float(os.getenv(name, default))
    except (TypeError, ValueError):
        logger.warning(f"[CONFIG] {name} is not a number, using {default}")
        return default


def _env_int(name: str, default: int) -> int:
    try:
        return int(os.getenv(name, default))
    except (TypeError, ValueError):
        logger.warning(f"[CONFIG] {name} is not an integer, using {default}")
        return default


class Settings:
    """Numerical and runtime settings loaded from environment variables"""

    # Load environment variables
    logger.debug("[CONFIG] Loading environment variables...")
    load_dotenv()

    # Solver settings
    SOLVER_TOLERANCE = _env_float('MFM_SOLVER_TOLERANCE', 1e-12)
    SOLVER_MAX_ITERATIONS = _env_int('MFM_SOLVER_MAX_ITERATIONS', 200)
    FEASIBILITY_TOLERANCE = _env_float('MFM_FEASIBILITY_TOLERANCE', 1e-10)

    # Enumeration and studies
    EXTREME_CAP = _env_int('MFM_EXTREME_CAP', 1000)
    MAX_WORKERS = _env_int('MFM_MAX_WORKERS', 4)

    # Logging
    LOG_LEVEL = os.getenv('MFM_LOG_LEVEL', 'WARNING')
    LOG_FILE: Optional[str] = os.getenv('MFM_LOG_FILE') or None
    logger.debug(f"[CONFIG] SOLVER_TOLERANCE: {SOLVER_TOLERANCE}")

    @classmethod
    def validate(cls):
        """Validate settings hold usable values"""
        logger.debug("[CONFIG] Validating settings...")
        problems = []

        if not 0 < cls.SOLVER_TOLERANCE < 1e-3:
            problems.append(f"MFM_SOLVER_TOLERANCE must be in (0, 1e-3), got {cls.SOLVER_TOLERANCE}")
        if cls.SOLVER_MAX_ITERATIONS < 1:
            problems.append(f"MFM_SOLVER_MAX_ITERATIONS must be positive, got {cls.SOLVER_MAX_ITERATIONS}")
        if not 0 < cls.FEASIBILITY_TOLERANCE < 1e-3:
            problems.append(f"MFM_FEASIBILITY_TOLERANCE must be in (0, 1e-3), got {cls.FEASIBILITY_TOLERANCE}")
        if cls.EXTREME_CAP < 1:
            problems.append(f"MFM_EXTREME_CAP must be positive, got {cls.EXTREME_CAP}")
        if cls.MAX_WORKERS < 1:
            problems.append(f"MFM_MAX_WORKERS must be positive, got {cls.MAX_WORKERS}")
        if cls.LOG_LEVEL.upper() not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            problems.append(f"MFM_LOG_LEVEL must be a logging level name, got {cls.LOG_LEVEL}")

        if problems:
            raise ValueError(
                f"Invalid settings: {'; '.join(problems)}. "
                f"Please check your .env file or environment."
            )
        return True
