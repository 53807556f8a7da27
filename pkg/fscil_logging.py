"""
FSCIL Logging Configuration - Centralized logging setup for the engine.

This module provides a consistent logging configuration that:
- Logs one line per epoch/session instead of per batch
- Prefixes messages with run context (session, epoch, seed)
- Supports console and file output
"""

import logging
import sys
from datetime import datetime
from typing import Optional


def setup_logging(
    level: int = logging.INFO,
    log_to_file: bool = False,
    log_file: Optional[str] = None,
    enable_console: bool = True
) -> None:
    """
    Configure logging for the engine.

    Args:
        level: Logging level (INFO by default)
        log_to_file: Whether to also log to file
        log_file: Path to log file (if log_to_file is True)
        enable_console: Whether to enable console logging
    """
    root_logger = logging.getLogger()
    root_logger.handlers = []
    # The file handler records DEBUG even when the console is quieter
    root_logger.setLevel(min(level, logging.DEBUG) if log_to_file and log_file else level)

    formatter = logging.Formatter(
        fmt='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%H:%M:%S'
    )

    if enable_console:
        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setLevel(level)
        console_handler.setFormatter(formatter)
        root_logger.addHandler(console_handler)

    if log_to_file and log_file:
        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setLevel(logging.DEBUG)
        file_formatter = logging.Formatter(
            fmt='%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )
        file_handler.setFormatter(file_formatter)
        root_logger.addHandler(file_handler)

    _configure_third_party_loggers()


def _configure_third_party_loggers() -> None:
    """Configure logging levels for third-party libraries to reduce noise."""
    logging.getLogger('numpy').setLevel(logging.WARNING)
    logging.getLogger('matplotlib').setLevel(logging.WARNING)
    logging.getLogger('urllib3').setLevel(logging.WARNING)


def get_phase_logger(phase: str) -> logging.Logger:
    """
    Get a logger for a specific phase of the learning algorithm.

    Args:
        phase: The phase name (e.g., 'pretrain', 'finetune')

    Returns:
        Logger instance for the phase
    """
    return logging.getLogger(f'fscil.{phase}')


def get_cli_logger() -> logging.Logger:
    """Get the logger used by the command-line front end."""
    return logging.getLogger('fscil.cli')


class PhaseLoggerAdapter(logging.LoggerAdapter):
    """
    Logger adapter that adds run context to log messages.

    Context keys that are present are rendered as a bracketed prefix so the
    training loops do not have to repeat them.
    """

    def process(self, msg, kwargs):
        """Add run context to the log message."""
        run_info = self.extra.get('run_info', {})

        context_parts = []
        if 'session' in run_info:
            context_parts.append(f"Session: {run_info['session']}")
        if 'epoch' in run_info:
            context_parts.append(f"Epoch: {run_info['epoch']}")
        if 'seed' in run_info:
            context_parts.append(f"Seed: {run_info['seed']}")

        if context_parts:
            msg = f"[{' | '.join(context_parts)}] {msg}"

        return msg, kwargs

    def with_epoch(self, epoch: int) -> 'PhaseLoggerAdapter':
        """Return an adapter with the epoch added to the context."""
        run_info = dict(self.extra.get('run_info', {}))
        run_info['epoch'] = epoch
        return PhaseLoggerAdapter(self.logger, {'run_info': run_info})


def create_phase_logger(
    phase: str,
    session: Optional[int] = None,
    seed: Optional[int] = None
) -> PhaseLoggerAdapter:
    """
    Create a logger adapter with run context.

    Args:
        phase: The phase name
        session: Session number (optional)
        seed: Training seed (optional)

    Returns:
        Logger adapter with run context
    """
    run_info = {}
    if session is not None:
        run_info['session'] = session
    if seed is not None:
        run_info['seed'] = seed
    return PhaseLoggerAdapter(get_phase_logger(phase), {'run_info': run_info})


def log_phase(phase_name: str):
    """
    Decorator to log the start and end of a step inside a phase.

    Args:
        phase_name: Name of the step being executed
    """
    def decorator(func):
        def wrapper(self, *args, **kwargs):
            logger = getattr(self, 'logger', logging.getLogger(__name__))
            logger.debug(f'Starting step: {phase_name}')
            try:
                result = func(self, *args, **kwargs)
                logger.debug(f'Completed step: {phase_name}')
                return result
            except Exception as e:
                logger.error(f'Step {phase_name} failed: {e}')
                raise
        return wrapper
    return decorator


def log_run_boundary(func):
    """
    Decorator to log a full run's start and end with timing.

    Applied to module-level entry points; uses the 'fscil.run' logger.
    """
    def wrapper(*args, **kwargs):
        logger = logging.getLogger('fscil.run')
        start_time = datetime.now()
        logger.info(f'{"=" * 60}')
        logger.info(f'Starting run at {start_time.strftime("%H:%M:%S")}')

        try:
            result = func(*args, **kwargs)
            duration = datetime.now() - start_time
            logger.info(f'Completed run - Duration: {duration}')
            logger.info(f'{"=" * 60}')
            return result

        except Exception as e:
            duration = datetime.now() - start_time
            logger.error(f'Run failed after {duration}: {e}')
            logger.info(f'{"=" * 60}')
            raise

    return wrapper
