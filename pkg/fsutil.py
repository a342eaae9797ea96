"""
File helpers shared by every writer: atomic replace and the asset path guard.
"""

import logging
import os

logger = logging.getLogger("darkstore.fsutil")


class PathTraversalError(Exception):
    """Exception raised when a manifest path points outside its asset directory."""
    pass


def resolve_asset_path(base_dir, relative):
    """
    Resolve a manifest-relative path under base_dir, refusing anything that
    would land outside it (absolute paths, '..' escapes, other drives).
    """
    base_dir = os.path.abspath(base_dir)
    if not relative or not str(relative).strip("/\\"):
        raise PathTraversalError(f"Invalid asset path in manifest: {relative!r}")
    relative = str(relative)
    if os.path.isabs(relative) or relative.startswith(("/", "\\")) or (len(relative) > 1 and relative[1] == ":"):
        raise PathTraversalError(f"Attempted path traversal (absolute path) in manifest: {relative}")

    target = os.path.abspath(os.path.normpath(os.path.join(base_dir, relative)))
    try:
        if os.path.commonpath([base_dir, target]) != base_dir:
            raise PathTraversalError(f"Attempted path traversal in manifest: {relative}")
    except ValueError:
        # different drives on Windows
        raise PathTraversalError(f"Attempted path traversal (different drive) in manifest: {relative}")
    return target


def atomic_write_text(path, text):
    """Write to <path>.tmp and move it over path."""
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    tmp_file = path + ".tmp"
    with open(tmp_file, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    os.replace(tmp_file, path)
    logger.debug(f"Wrote {path}")


def atomic_write_bytes(path, data):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    tmp_file = path + ".tmp"
    with open(tmp_file, "wb") as f:
        f.write(data)
    os.replace(tmp_file, path)
    logger.debug(f"Wrote {path}")
