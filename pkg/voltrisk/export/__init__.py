"""
Report and comparison output.
"""

from voltrisk.export.comparison import (
    ArmResult,
    Comparison,
    ComparisonError,
    ComparisonRow,
    artifact_paths,
    build_comparison,
    check_feeder_hashes,
    per_node_error_frame,
    render_markdown,
    slugify,
    write_comparison,
)
from voltrisk.export.templates import (
    TemplateError,
    format_number,
    get_templates_dir,
    list_available_templates,
    render_template,
)

__all__ = [
    "ArmResult",
    "Comparison",
    "ComparisonRow",
    "ComparisonError",
    "TemplateError",
    "artifact_paths",
    "build_comparison",
    "check_feeder_hashes",
    "per_node_error_frame",
    "render_markdown",
    "slugify",
    "write_comparison",
    "format_number",
    "get_templates_dir",
    "list_available_templates",
    "render_template",
]
