"""
Fixtures compartidas: campos de referencia y solvers sobre mallas gruesas.
"""
import pytest

from core.coefficient_field import build_field
from core.evolution import EvolutionSolver
from core.expression_parser import parse_expr
from models.lab_models import Grid, OUParams

OU_DRIFT = "-x1+cos(2*pi*t)"
CUBIC_DRIFT = "-x1^3*(1+0.5*sin(2*pi*t))"


@pytest.fixture(scope="session")
def ou_field():
    return build_field(1, 1.0, [["1"]], [OU_DRIFT])


@pytest.fixture(scope="session")
def cubic_field():
    return build_field(1, 1.0, [["1"]], [CUBIC_DRIFT])


@pytest.fixture(scope="session")
def ou_params():
    return OUParams(a=parse_expr("-1"), f=parse_expr("cos(2*pi*t)"),
                    q=parse_expr("1"), period=1.0)


@pytest.fixture(scope="session")
def ou_solver(ou_field):
    """R=6, h=0.1, dt=0.01: 119 nodos interiores."""
    return EvolutionSolver(ou_field, Grid(1, 6.0, 0.1), 0.01)


@pytest.fixture(scope="session")
def cubic_solver(cubic_field):
    """R=3, h=0.1, dt=0.01: caja pequeña, la deriva cúbica confina la masa."""
    return EvolutionSolver(cubic_field, Grid(1, 3.0, 0.1), 0.01)
