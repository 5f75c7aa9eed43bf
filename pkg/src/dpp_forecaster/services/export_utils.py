"""
Shared utilities for file export.

Common functions used by the dataset writer, checkpoints, loss traces,
reports and plot-data export.
"""

import os
import tempfile
from collections.abc import Iterable, Sequence
from pathlib import Path

from dpp_forecaster.utils.logger import get_logger

logger = get_logger(__name__)

DELIMITER = "\t"


def format_float(value: float) -> str:
    """
    Format a float with full round-trip precision.

    Args:
        value: Float to format

    Returns:
        str: Shortest decimal string that parses back to the same double

    Example:
        format_float(0.1)
        # Returns: "0.1"
    """
    return repr(float(value))


def format_cell(value: object) -> str:
    """Format one table cell; floats keep full precision."""
    if isinstance(value, float):
        return format_float(value)
    if value is None:
        return ""
    return str(value)


def atomic_write_text(path: Path, text: str) -> Path:
    """
    Write text to a file atomically.

    The content is written to a temporary file in the target directory and
    then renamed over the target, so readers never see a partial file.

    Args:
        path: Target file path
        text: File content

    Returns:
        Path to the written file

    Raises:
        OSError: If the directory is not writable (message includes the path)
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except OSError as e:
        Path(tmp_name).unlink(missing_ok=True)
        logger.error(f"Failed to write {path}: {e}")
        raise OSError(f"Failed to write {path}: {e}") from e

    logger.debug("Wrote %s (%d bytes)", path, len(text))
    return path


def format_table(
    columns: Sequence[str],
    rows: Iterable[Sequence[object]],
    comments: Sequence[str] = (),
) -> str:
    """
    Render rows as delimiter-separated text with a header row.

    Format:
        # optional comment line
        col_a<TAB>col_b
        1<TAB>0.25

    Args:
        columns: Column names (fixed order)
        rows: Row values, one sequence per row
        comments: Lines emitted before the header, each prefixed with "# "

    Returns:
        str: Table text ending with a newline
    """
    lines = [f"# {comment}" for comment in comments]
    lines.append(DELIMITER.join(columns))
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(
                f"Row has {len(row)} cells but table has {len(columns)} columns"
            )
        lines.append(DELIMITER.join(format_cell(cell) for cell in row))
    return "\n".join(lines) + "\n"


def write_table(
    path: Path,
    columns: Sequence[str],
    rows: Iterable[Sequence[object]],
    comments: Sequence[str] = (),
) -> Path:
    """
    Write a delimiter-separated table atomically.

    Args:
        path: Target file path
        columns: Column names
        rows: Row values
        comments: Optional header comment lines

    Returns:
        Path to the written file
    """
    return atomic_write_text(path, format_table(columns, rows, comments))


def read_table(path: Path) -> tuple[list[str], list[list[str]]]:
    """
    Read a table written by write_table.

    Comment lines are skipped; cells are returned as strings.

    Args:
        path: Table file

    Returns:
        Tuple of (columns, rows)
    """
    lines = [
        line
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        if line and not line.startswith("#")
    ]
    if not lines:
        return [], []
    columns = lines[0].split(DELIMITER)
    rows = [line.split(DELIMITER) for line in lines[1:]]
    return columns, rows
