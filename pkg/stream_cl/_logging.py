import logging

PACKAGE_LOGGER = "stream_cl"


def configure_logging(level: int | str = logging.INFO, *, rich_output: bool = True) -> logging.Logger:
    """
    Attaches a single handler to the package logger.
    Safe to call repeatedly; library modules never call this themselves.
    """
    logger = logging.getLogger(PACKAGE_LOGGER)
    logger.setLevel(level)

    for handler in logger.handlers:
        if getattr(handler, "_stream_cl_handler", False):
            handler.setLevel(level)
            return logger

    handler: logging.Handler
    if rich_output:
        from rich.logging import RichHandler

        handler = RichHandler(rich_tracebacks=True, show_path=False, markup=False)
        handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
    else:
        handler = logging.StreamHandler()
        handler.setFormatter(
            logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
        )

    handler._stream_cl_handler = True  # type: ignore[attr-defined]
    handler.setLevel(level)
    logger.addHandler(handler)
    logger.propagate = False
    return logger
