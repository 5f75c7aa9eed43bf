"""
Unit tests for logger module.

Tests handler setup, log files and duration logging.
"""

import logging

import pytest

from dpp_forecaster.utils.logger import get_logger, log_duration, setup_logger


@pytest.fixture()
def logger_name(request):
    """Unique logger name per test; handlers are removed afterwards."""
    name = f"dpp_forecaster_test.{request.node.name}"
    yield name
    logging.getLogger(name).handlers.clear()


class TestSetupLogger:
    """Test logger configuration."""

    def test_level_is_case_insensitive(self, logger_name):
        """Test that lowercase level names are accepted."""
        logger = setup_logger(logger_name, "warning")
        assert logger.level == logging.WARNING

    def test_repeated_setup_does_not_duplicate_handlers(self, logger_name):
        """Test that each call replaces the previous handlers."""
        setup_logger(logger_name, "INFO")
        logger = setup_logger(logger_name, "INFO")
        assert len(logger.handlers) == 1

    def test_unknown_level(self, logger_name):
        """Test that an unknown level names the valid ones."""
        with pytest.raises(ValueError, match="Valid levels"):
            setup_logger(logger_name, "LOUD")

    def test_console_writes_to_stderr(self, logger_name, capsys):
        """Test that stdout stays free of log records."""
        setup_logger(logger_name, "INFO").info("kernel built")
        captured = capsys.readouterr()
        assert captured.out == ""
        assert "kernel built" in captured.err

    def test_log_file_receives_debug_records(self, logger_name, tmp_path):
        """Test that the file handler logs below the console level."""
        log_file = tmp_path / "logs" / "run.log"
        logger = setup_logger(logger_name, "WARNING", log_file)
        logger.debug("greedy step 3")
        for handler in logger.handlers:
            handler.flush()

        text = log_file.read_text(encoding="utf-8")
        assert "greedy step 3" in text
        assert "test_log_file_receives_debug_records" in text

    def test_get_logger_returns_same_instance(self, logger_name):
        """Test that get_logger returns the configured logger."""
        assert get_logger(logger_name) is setup_logger(logger_name)


class TestLogDuration:
    """Test the duration context manager."""

    def test_logs_on_success(self, caplog):
        """Test that a finished block logs its label."""
        logger = logging.getLogger("dpp_forecaster_test.duration")
        with caplog.at_level(logging.INFO, logger=logger.name):
            with log_duration(logger, "train dsf"):
                pass
        assert any("train dsf finished in" in r.getMessage() for r in caplog.records)

    def test_silent_on_error(self, caplog):
        """Test that a failing block logs nothing."""
        logger = logging.getLogger("dpp_forecaster_test.duration")
        with caplog.at_level(logging.INFO, logger=logger.name):
            with pytest.raises(RuntimeError):
                with log_duration(logger, "train dsf"):
                    raise RuntimeError("diverged")
        assert not caplog.records
