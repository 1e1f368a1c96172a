"""Helper utilities shared across voltrisk modules."""

from voltrisk.utils.io import atomic_write, canonical_json, derive_seed, sha256_text

__all__ = ["atomic_write", "canonical_json", "derive_seed", "sha256_text"]
