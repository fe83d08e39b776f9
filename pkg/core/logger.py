"""
Logger compartido por todos los módulos del núcleo.
"""
import logging

logger = logging.getLogger("evolab")

_FORMAT = "%(asctime)s %(levelname)-7s %(name)s.%(module)s: %(message)s"


def configure_logging(verbosity: int = 0) -> None:
    """Configura el handler de consola. 0=WARNING, 1=INFO, 2+=DEBUG."""
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG

    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(_FORMAT, datefmt="%H:%M:%S"))
        logger.addHandler(handler)
    logger.setLevel(level)
