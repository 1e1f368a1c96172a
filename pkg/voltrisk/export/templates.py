"""
Report template lookup and rendering.

Templates are Jinja2 files under voltrisk/templates; VOLTRISK_TEMPLATES_DIR
may point at a directory holding replacements with the same names.
"""

import logging
import os
from pathlib import Path
from typing import Any, List, Optional

from jinja2 import Environment, FileSystemLoader, StrictUndefined, TemplateNotFound

from voltrisk.exceptions import VoltRiskError

logger = logging.getLogger(__name__)


class TemplateError(VoltRiskError):
    """A report template is missing or failed to render."""

    pass


def get_templates_dir() -> Path:
    """
    Get the directory report templates are loaded from.

    Returns:
        Path to the templates directory
    """
    templates_dir = os.environ.get("VOLTRISK_TEMPLATES_DIR")
    if templates_dir:
        path = Path(templates_dir)
        if path.exists() and path.is_dir():
            return path
        logger.warning("VOLTRISK_TEMPLATES_DIR=%s is not a directory, ignoring", templates_dir)

    return Path(__file__).parent.parent / "templates"


def list_available_templates() -> List[str]:
    """Names of the report templates (without the .j2 suffix)."""
    return sorted(path.stem for path in get_templates_dir().glob("*.j2"))


def format_number(value: Optional[float], digits: int = 4) -> str:
    """Format an optional float for a report cell."""
    if value is None:
        return "n/a"
    return f"{value:.{digits}f}"


def render_template(name: str, **context: Any) -> str:
    """
    Render a report template.

    Args:
        name: Template file name, e.g. "comparison_report.md.j2"
        **context: Template variables

    Returns:
        Rendered text

    Raises:
        TemplateError: If the template is missing
    """
    env = Environment(
        loader=FileSystemLoader(str(get_templates_dir())),
        undefined=StrictUndefined,
        keep_trailing_newline=True,
        trim_blocks=True,
        lstrip_blocks=True,
    )
    env.filters["num"] = format_number
    try:
        template = env.get_template(name)
    except TemplateNotFound as e:
        raise TemplateError(f"Report template '{name}' not found in {get_templates_dir()}") from e
    return template.render(**context)
