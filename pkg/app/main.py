# app/main.py
import sys
from typing import Optional, Sequence

import click
from loguru import logger

from .cli.main import cli
from .core.exceptions import AppException, ConfigurationError, handle_app_exception


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one CLI command and translate failures into exit codes

    Exit codes:
        0 success, 1 internal error, 2 configuration error,
        3 data/input error, 4 numerical abort
    """
    command = None
    try:
        with cli.make_context("vessel-audio", list(sys.argv[1:] if argv is None else argv)) as ctx:
            command = next(iter(ctx.protected_args + ctx.args), None)
            cli.invoke(ctx)
        return 0
    except AppException as e:
        return handle_app_exception(e, command=command)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.UsageError as e:
        return handle_app_exception(ConfigurationError(e.format_message()), command=command)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error: {str(e)}")
        print(f"INTERNAL_ERROR: {type(e).__name__}: {' '.join(str(e).split())}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
