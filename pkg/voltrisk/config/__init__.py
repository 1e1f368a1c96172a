"""
Configuration module for voltrisk.

This module provides configuration management for the application.
Values come from environment variables, falling back to defaults.
"""

import os
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, Field


class Config(BaseModel):
    """Application configuration."""

    output_dir: str = str(Path.cwd() / "runs")
    feeders_dir: Optional[str] = None
    workers: int = Field(default=1, ge=1)
    log_level: str = "WARNING"
    solver_tol: float = Field(default=1e-6, gt=0)
    solver_max_iter: int = Field(default=50_000, gt=0)
    soft_penalty: float = Field(default=1e4, gt=0)


_config: Optional[Config] = None


def get_config() -> Config:
    """Get the application configuration.

    Returns:
        The application configuration
    """
    global _config

    if _config is None:
        defaults = Config()
        _config = Config(
            output_dir=os.getenv("VOLTRISK_OUTPUT_DIR", defaults.output_dir),
            feeders_dir=os.getenv("VOLTRISK_FEEDERS_DIR", defaults.feeders_dir),
            workers=int(os.getenv("VOLTRISK_WORKERS", defaults.workers)),
            log_level=os.getenv("VOLTRISK_LOG_LEVEL", defaults.log_level).upper(),
            solver_tol=float(os.getenv("VOLTRISK_SOLVER_TOL", defaults.solver_tol)),
            solver_max_iter=int(
                os.getenv("VOLTRISK_SOLVER_MAX_ITER", defaults.solver_max_iter)
            ),
            soft_penalty=float(
                os.getenv("VOLTRISK_SOFT_PENALTY", defaults.soft_penalty)
            ),
        )

    return _config


def reset_config() -> None:
    """Forget the cached configuration so the environment is read again."""
    global _config
    _config = None
