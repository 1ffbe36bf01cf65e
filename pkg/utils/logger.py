"""
Run logging: one file under LOG_DIR plus the console, every line stamped with the fold
and stage currently being worked on
"""

import logging
import os

from config import LOG_DIR, LOG_FILE, LOG_LEVEL

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(run_context)s%(message)s"

STEP_LEVELS = {"STARTED": logging.INFO, "COMPLETED": logging.INFO, "WARNING": logging.WARNING, "ERROR": logging.ERROR}
CHECK_LEVELS = {"PASS": logging.DEBUG, "WARNING": logging.WARNING, "FAIL": logging.ERROR}
ALERT_LEVELS = {"INFO": logging.INFO, "WARNING": logging.WARNING, "ERROR": logging.ERROR, "CRITICAL": logging.CRITICAL}

_level = LOG_LEVEL
_context = {}
# logger name -> log file its handlers currently write to
_configured = {}


class RunContextFilter(logging.Filter):
    def filter(self, record):
        record.run_context = "".join(f"[{key} {value}] " for key, value in _context.items())
        return True


def set_log_level(level):
    """
    Override the configured level for every logger set up afterwards (CLI --log-level)
    """
    global _level
    _level = level


def set_run_context(**fields):
    """
    Stamp later lines with e.g. ``fold=2, stage="main"``; a None value clears the field
    """
    for key, value in fields.items():
        if value is None:
            _context.pop(key, None)
        else:
            _context[key] = value


def setup_logger(name="brain_tumor_pipeline"):
    level = getattr(logging, _level.upper())
    logger = logging.getLogger(name)
    logger.setLevel(level)

    log_path = os.path.join(LOG_DIR, LOG_FILE)
    if _configured.get(name) == log_path and logger.handlers:
        return logger

    os.makedirs(LOG_DIR, exist_ok=True)
    for handler in list(logger.handlers):
        handler.close()
        logger.removeHandler(handler)
    logger.propagate = False

    formatter = logging.Formatter(LOG_FORMAT)
    for handler in (logging.FileHandler(log_path), logging.StreamHandler()):
        handler.setFormatter(formatter)
        handler.addFilter(RunContextFilter())
        logger.addHandler(handler)
    _configured[name] = log_path
    return logger


def _emit(levels, key, message):
    logger = setup_logger()
    logger.log(levels.get(key, logging.INFO), message)
    return logger


def _with_details(message, details):
    return f"{message} - Details: {details}" if details else message


def log_pipeline_step(step_name, status="STARTED", details=None):
    """
    Log a stage transition and hand back the pipeline logger
    """
    return _emit(STEP_LEVELS, status, _with_details(f"Pipeline Step: {step_name} - {status}", details))


def log_data_quality_check(check_name, result, details=None):
    return _emit(CHECK_LEVELS, result, _with_details(f"Data Quality Check: {check_name} - Result: {result}", details))


def log_alert(alert_type, message, severity="INFO"):
    """
    Dropped samples, empty predictions, NaN losses, golden mismatches
    """
    return _emit(ALERT_LEVELS, severity, f"ALERT [{alert_type}]: {message}")
