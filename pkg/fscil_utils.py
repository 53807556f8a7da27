"""
FSCIL Utilities - Shared file and formatting helpers.

This module contains helpers used across the protocol, metrics, analysis and
CLI modules for writing output files reproducibly.
"""

import json
import logging
from pathlib import Path
from typing import Any, Union

from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_fixed

from fscil_constants import DEFAULT_TIMING

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@retry(
    stop=stop_after_attempt(DEFAULT_TIMING['file_retry_attempts']),
    wait=wait_fixed(DEFAULT_TIMING['file_retry_wait']),
    retry=retry_if_exception_type((PermissionError, BlockingIOError)),
    reraise=True,
)
def write_text(path: PathLike, text: str) -> Path:
    """
    Write UTF-8 text to a file, creating parent directories.

    Transient lock errors are retried.

    Args:
        path: Destination file
        text: Content to write

    Returns:
        The written path
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, 'w', encoding='utf-8', newline='') as f:
        f.write(text)
    logger.debug(f'Wrote {len(text)} characters to {target}')
    return target


def dumps_json(data: Any) -> str:
    """Serialize to stable JSON (sorted keys, two-space indent, trailing newline)."""
    return json.dumps(data, sort_keys=True, indent=2) + '\n'


def write_json(path: PathLike, data: Any) -> Path:
    """Write data as stable JSON."""
    return write_text(path, dumps_json(data))


def format_percent(value: float) -> str:
    """Render a fraction in [0,1] as a percentage with two decimals."""
    return f'{100.0 * value:.2f}'


def format_float(value: float) -> str:
    """Shortest text form that parses back to the identical float."""
    return repr(float(value))
