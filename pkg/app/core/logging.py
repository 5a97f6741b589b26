# app/core/logging.py
import sys
from pathlib import Path
from typing import Optional

from loguru import logger
from tqdm import tqdm

from .config import get_settings

settings = get_settings()

FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level} | {name}:{line} | {message} | {extra}"
CONSOLE_FORMAT = "<green>{time:HH:mm:ss}</green> | <level>{level: <7}</level> | <cyan>{message}</cyan>"


def _console_sink(message) -> None:
    # tqdm.write keeps running progress bars on their own line
    tqdm.write(str(message), file=sys.stderr, end="")


class LoggerManager:
    @staticmethod
    def setup_logging(level: Optional[str] = None, log_path: Optional[str] = None):
        """
        File sink always; console sink (stderr) in development.
        stdout is reserved for command results.
        """
        level = (level or settings.LOG_LEVEL).upper()
        log_path = Path(log_path or settings.LOG_PATH)

        logger.remove()
        log_path.parent.mkdir(parents=True, exist_ok=True)
        logger.add(
            str(log_path),
            level=level,
            format=FILE_FORMAT,
            serialize=settings.LOG_JSON,
            rotation=settings.LOG_ROTATION,
            retention=settings.LOG_RETENTION,
        )

        if settings.APP_ENV == "development":
            logger.add(_console_sink, level=level, format=CONSOLE_FORMAT, colorize=sys.stderr.isatty())

        logger.bind(level=level, log_path=str(log_path)).debug("Logging configured")


logger_manager = LoggerManager()
