"""
File and hashing helpers.

Every artifact voltrisk writes goes through atomic_write, so a failed
command never leaves a half-written file under the final name.
"""

import hashlib
import json
import os
import tempfile
import zlib
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator, TextIO, Union

import numpy as np


@contextmanager
def atomic_write(path: Union[str, Path]) -> Iterator[TextIO]:
    """
    Open a temporary file next to ``path`` and rename it into place on success.

    Args:
        path: Final destination of the file

    Yields:
        A text handle to write to
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(
        prefix=f".{target.name}.", suffix=".tmp", dir=target.parent
    )
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            yield handle
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise


def canonical_json(data: Any) -> str:
    """Serialize to compact JSON with sorted keys."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def sha256_text(text: str) -> str:
    """Hex SHA-256 digest of a string."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def derive_seed(seed: int, component: str) -> int:
    """
    Expand a single run seed into an independent seed for one component.

    Args:
        seed: The run-level seed
        component: Name of the consumer, e.g. "profiles" or "init"

    Returns:
        A 32-bit seed that is stable across runs and platforms
    """
    sequence = np.random.SeedSequence([seed, zlib.crc32(component.encode("utf-8"))])
    return int(sequence.generate_state(1)[0])
