"""
Logging for seriestable.

Console lines go to stderr so `encode` and `dump-prompt` can stream on stdout. The
optional file handler stamps every line with the run tag (`<Dataset>/<config hash>`).
"""

import logging
import sys
import traceback
from pathlib import Path
from typing import Optional, TextIO, Union

ROOT_LOGGER_NAME = 'seriestable'

CONSOLE_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
FILE_FORMAT = '%(asctime)s - %(run_tag)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s'


class ColoredFormatter(logging.Formatter):
    """Colors the level name for terminal output."""

    LEVEL_COLORS = {
        logging.DEBUG: '\033[36m',
        logging.INFO: '\033[32m',
        logging.WARNING: '\033[33m',
        logging.ERROR: '\033[31m',
        logging.CRITICAL: '\033[35m',
    }
    RESET = '\033[0m'

    def format(self, record: logging.LogRecord) -> str:
        # copy: the file handler must not see escape codes
        record = logging.makeLogRecord(record.__dict__)
        color = self.LEVEL_COLORS.get(record.levelno)
        if color:
            record.levelname = f"{color}{record.levelname}{self.RESET}"
        return super().format(record)


class RunTagFilter(logging.Filter):
    """Attaches `run_tag` to every record passing through a handler"""

    def __init__(self, run_tag: str = "-"):
        super().__init__()
        self.run_tag = run_tag

    def filter(self, record: logging.LogRecord) -> bool:
        record.run_tag = self.run_tag
        return True


def resolve_level(level: Union[int, str]) -> int:
    if isinstance(level, int):
        return level
    value = logging.getLevelName(level.upper())
    if not isinstance(value, int):
        raise ValueError(f"Unknown log level: {level}")
    return value


def setup_logger(name: str = ROOT_LOGGER_NAME, log_file: Optional[str] = None,
                 level: Union[int, str] = logging.INFO, stream: Optional[TextIO] = None,
                 run_tag: Optional[str] = None) -> logging.Logger:
    """
    Install the console handler and, when `log_file` is set, a UTF-8 file handler.

    Calling it again on a configured logger only updates the level and run tag.

    Args:
        name: Logger name
        log_file: Log file path, or None for console only
        level: Level number or name such as "DEBUG"
        stream: Console stream, defaults to stderr
        run_tag: Written into every file line

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)
    logger.setLevel(resolve_level(level))

    if logger.handlers:
        if run_tag:
            for handler in logger.handlers:
                for f in handler.filters:
                    if isinstance(f, RunTagFilter):
                        f.run_tag = run_tag
        return logger

    stream = stream or sys.stderr
    is_tty = getattr(stream, 'isatty', lambda: False)()
    console_handler = logging.StreamHandler(stream)
    console_handler.setFormatter(ColoredFormatter(CONSOLE_FORMAT) if is_tty else logging.Formatter(CONSOLE_FORMAT))
    logger.addHandler(console_handler)

    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.addFilter(RunTagFilter(run_tag or "-"))
        file_handler.setFormatter(logging.Formatter(FILE_FORMAT))
        logger.addHandler(file_handler)

    return logger


def log_exception(logger: logging.Logger, exception: BaseException, context: str = "") -> None:
    """ERROR line with the exception type and message; traceback at DEBUG"""
    where = f" [{context}]" if context else ""
    logger.error(f"{type(exception).__name__}{where}: {exception}")
    logger.debug(f"Traceback{where}:\n{traceback.format_exc()}")


def get_logger(area: str) -> logging.Logger:
    """Logger for one area of the package, e.g. `get_logger('retrieval')`"""
    return logging.getLogger(f"{ROOT_LOGGER_NAME}.{area}")


data_logger = get_logger('data')
retrieval_logger = get_logger('retrieval')
ai_logger = get_logger('ai')
ensemble_logger = get_logger('ensemble')
eval_logger = get_logger('eval')
config_logger = get_logger('config')
