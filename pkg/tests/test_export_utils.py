"""
Unit tests for export utilities.

Tests float formatting, atomic writes and the tab-separated table format.
"""

import pytest

from dpp_forecaster.services.export_utils import (
    atomic_write_text,
    format_cell,
    format_float,
    format_table,
    read_table,
    write_table,
)


class TestFormatting:
    """Test cell formatting."""

    @pytest.mark.parametrize("value", [0.1, 1 / 3, 1e-300, -2.5e17, 0.0])
    def test_float_round_trip(self, value):
        """Test that formatted floats parse back bit-identically."""
        assert float(format_float(value)) == value

    def test_cells(self):
        """Test ints, strings and None."""
        assert format_cell(3) == "3"
        assert format_cell("dsf") == "dsf"
        assert format_cell(None) == ""

    def test_table_layout(self):
        """Test comment lines, header and rows."""
        text = format_table(["a", "b"], [[1, 0.5], ["x", None]], comments=["seed 0"])
        assert text == "# seed 0\na\tb\n1\t0.5\nx\t\n"

    def test_row_width_is_checked(self):
        """Test that ragged rows are rejected."""
        with pytest.raises(ValueError):
            format_table(["a", "b"], [[1]])


class TestFiles:
    """Test file writing and reading."""

    def test_atomic_write_creates_parents(self, tmp_path):
        """Test that missing directories are created."""
        path = atomic_write_text(tmp_path / "deep" / "dir" / "out.txt", "hello\n")
        assert path.read_text(encoding="utf-8") == "hello\n"
        assert [p.name for p in path.parent.iterdir()] == ["out.txt"]

    def test_overwrite_replaces_content(self, tmp_path):
        """Test that rewriting a file replaces it."""
        path = tmp_path / "out.txt"
        atomic_write_text(path, "first")
        atomic_write_text(path, "second")
        assert path.read_text(encoding="utf-8") == "second"

    def test_table_round_trip(self, tmp_path):
        """Test that read_table skips comments and splits cells."""
        path = write_table(
            tmp_path / "report.tsv",
            ["method", "ade"],
            [["dsf", 0.25], ["cvae", 0.5]],
            comments=["initial cardinality 1.2"],
        )
        columns, rows = read_table(path)
        assert columns == ["method", "ade"]
        assert rows == [["dsf", "0.25"], ["cvae", "0.5"]]

    def test_empty_table_file(self, tmp_path):
        """Test that a file with only comments reads as empty."""
        path = tmp_path / "empty.tsv"
        path.write_text("# nothing\n", encoding="utf-8")
        assert read_table(path) == ([], [])
