import io
import logging
import os
import typing as tp

from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

LOG_ENV_VAR = "PREVIEW_MPC_LOG"
DEFAULT_LEVEL = "WARNING"


def configure_logging(level: tp.Optional[tp.Union[int, str]] = None) -> int:
    """
    Routes the `previewmpc` loggers through a `rich` handler.

    Arguments:
        level: a `logging` level name or number. When `None` the level is read
            from the `PREVIEW_MPC_LOG` environment variable, falling back to `WARNING`.

    Returns:
        The numeric level that was set.
    """
    if level is None:
        level = os.environ.get(LOG_ENV_VAR, DEFAULT_LEVEL)

    if isinstance(level, str):
        name = level.strip().upper()
        numeric = logging.getLevelName(name)

        if not isinstance(numeric, int):
            raise ValueError(
                f"{LOG_ENV_VAR} must be one of DEBUG, INFO, WARNING, ERROR, got '{level}'"
            )
        level = numeric

    logger = logging.getLogger("previewmpc")
    logger.setLevel(level)

    if not any(isinstance(h, RichHandler) for h in logger.handlers):
        logger.addHandler(
            RichHandler(show_path=False, rich_tracebacks=True, markup=False)
        )

    logger.propagate = False

    return level


def render_table(
    columns: tp.Sequence[str],
    rows: tp.Iterable[tp.Sequence[tp.Any]],
    title: tp.Optional[str] = None,
    float_format: str = "{:.6g}",
    color: bool = True,
) -> str:
    """
    Renders rows as an aligned `rich` table and returns the text.

    Arguments:
        columns: column headers.
        rows: row values, floats are formatted with `float_format`.
        title: optional caption above the table.
        float_format: format used for float cells.
        color: whether to emit terminal styling, disable it when writing files.

    Returns:
        The rendered table.
    """
    table = Table(show_header=True, title=title)

    for i, column in enumerate(columns):
        table.add_column(column, justify="left" if i == 0 else "right")

    for row in rows:
        table.add_row(
            *(
                float_format.format(value) if isinstance(value, float) else str(value)
                for value in row
            )
        )

    f = io.StringIO()
    Console(file=f, force_terminal=color, no_color=not color, width=120).print(table)

    return f.getvalue()
