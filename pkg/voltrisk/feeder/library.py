"""
Feeder library.

Feeders can be referred to by file path or by name. Names are looked up in
VOLTRISK_FEEDERS_DIR first and then in the feeders shipped with the package.
"""

import logging
from pathlib import Path
from typing import List, Optional, Union

from voltrisk.config import get_config
from voltrisk.feeder.models import FeederModel
from voltrisk.feeder.network import FeederFormatError, load_feeder

logger = logging.getLogger(__name__)


def get_packaged_feeders_dir() -> Path:
    """Directory of the feeder files shipped with voltrisk."""
    return Path(__file__).parent.parent / "data" / "feeders"


def get_feeders_dirs() -> List[Path]:
    """
    Get the directories searched for named feeders, in lookup order.

    Returns:
        List of existing directories
    """
    dirs = []
    custom = get_config().feeders_dir
    if custom:
        path = Path(custom)
        if path.exists() and path.is_dir():
            dirs.append(path)
        else:
            logger.warning("VOLTRISK_FEEDERS_DIR=%s is not a directory", custom)
    dirs.append(get_packaged_feeders_dir())
    return dirs


def list_available_feeders() -> List[str]:
    """
    List all feeders that can be referred to by name.

    Returns:
        Sorted feeder names (file stems, first directory wins)
    """
    names = set()
    for directory in get_feeders_dirs():
        names.update(path.stem for path in directory.glob("*.json"))
    return sorted(names)


def find_feeder_file(name: str) -> Optional[Path]:
    """Locate a named feeder file, or None."""
    for directory in get_feeders_dirs():
        candidate = directory / f"{name}.json"
        if candidate.is_file():
            return candidate
    return None


def resolve_feeder(name_or_path: Union[str, Path]) -> FeederModel:
    """
    Load a feeder given either a path or a library name.

    Args:
        name_or_path: File path, or the stem of a feeder in the library

    Returns:
        Validated FeederModel

    Raises:
        FeederFormatError: If nothing matches
    """
    path = Path(name_or_path)
    if path.is_file():
        return load_feeder(path)

    found = find_feeder_file(str(name_or_path))
    if found is None:
        available = ", ".join(list_available_feeders()) or "none"
        raise FeederFormatError(
            f"Feeder '{name_or_path}' is neither a file nor a known feeder "
            f"(available: {available})"
        )
    logger.info("Using feeder %s from %s", name_or_path, found.parent)
    return load_feeder(found)
