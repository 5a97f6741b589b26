# app/core/exceptions.py
import sys
from typing import List, Optional

from loguru import logger


class AppException(Exception):
    def __init__(
            self,
            detail: str,
            error_code: str = "APP_ERROR",
            exit_code: int = 1
    ):
        super().__init__(detail)
        self.detail = detail
        self.error_code = error_code
        self.exit_code = exit_code


def handle_app_exception(exc: AppException, command: Optional[str] = None) -> int:
    """Log the failure and print a single machine-parseable line to stderr.

    Returns:
        int: process exit code for the failure category
    """
    logger.bind(
        error_code=exc.error_code,
        exit_code=exc.exit_code,
        command=command
    ).error(f"AppException: {exc.detail}")

    print(f"{exc.error_code}: {' '.join(str(exc.detail).split())}", file=sys.stderr)
    return exc.exit_code


class ConfigurationError(AppException):
    def __init__(self, detail: str):
        super().__init__(
            detail=detail,
            error_code="CONFIG_ERROR",
            exit_code=2
        )


class InputError(AppException):
    def __init__(self, detail: str):
        super().__init__(
            detail=detail,
            error_code="INPUT_ERROR",
            exit_code=3
        )


class DataValidationError(AppException):
    def __init__(self, detail: str, errors: Optional[List[str]] = None):
        self.errors = list(errors or [])
        if self.errors:
            detail = f"{detail}: " + "; ".join(self.errors)
        super().__init__(
            detail=detail,
            error_code="VALIDATION_ERROR",
            exit_code=3
        )


class CheckpointError(AppException):
    def __init__(self, detail: str):
        super().__init__(
            detail=detail,
            error_code="CHECKPOINT_ERROR",
            exit_code=3
        )


class NumericalError(AppException):
    def __init__(self, detail: str):
        super().__init__(
            detail=detail,
            error_code="NUMERICAL_ERROR",
            exit_code=4
        )


class UninitializedStatisticsError(AppException):
    def __init__(self, detail: str):
        super().__init__(
            detail=detail,
            error_code="UNINITIALIZED_STATS",
            exit_code=4
        )


class InternalError(AppException):
    def __init__(self, detail: str):
        super().__init__(
            detail=detail,
            error_code="INTERNAL_ERROR",
            exit_code=1
        )
