"""
Modelos de configuración de experimentos.
"""
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional

from models.lab_models import CoefficientField, Grid, LyapunovData, OUParams

SUBCOMMANDS = ("validate", "lyapunov", "solve", "kernel", "tightness",
               "measures", "spectrum", "decay", "mc")


@dataclass(frozen=True)
class NumericsConfig:
    """Parámetros de discretización: caja [-R,R]^d, paso h, paso temporal dt."""
    R: float
    h: float
    dt: float
    theta: float = 1.0
    drift_scheme: str = "hybrid"

    def grid(self, d: int) -> Grid:
        return Grid(d, self.R, self.h)

    def refined(self, levels: int) -> 'NumericsConfig':
        """h -> h/2, dt -> dt/4 por nivel."""
        return replace(self, h=self.h / 2 ** levels, dt=self.dt / 4 ** levels)


@dataclass
class ExperimentSpec:
    """Un experimento de la lista: tipo, parámetros y expectativas."""
    kind: str
    name: str
    params: Dict[str, Any] = field(default_factory=dict)
    expect: Dict[str, Any] = field(default_factory=dict)

    def param(self, key: str, default=None):
        return self.params.get(key, default)


@dataclass
class ExperimentConfig:
    """Configuración validada de una corrida."""
    name: str
    field: CoefficientField
    numerics: NumericsConfig
    experiments: List[ExperimentSpec] = field(default_factory=list)
    lyapunov: Optional[LyapunovData] = None
    ou: Optional[OUParams] = None
    output_dir: str = "out"
    seed: int = 0
    source: Dict[str, Any] = field(default_factory=dict)
    path: str = ""

    def experiments_for(self, subcommand: str) -> List[ExperimentSpec]:
        """Experimentos de un subcomando; 'all' retorna la lista completa."""
        if subcommand == "all":
            return list(self.experiments)
        selected = [e for e in self.experiments if e.kind == subcommand]
        return selected or [ExperimentSpec(kind=subcommand, name=subcommand)]
