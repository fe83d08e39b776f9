"""
Modelos de reportes: veredictos numéricos, residuos y reporte de corrida.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional


@dataclass
class CheckRecord:
    """Veredicto numérico con la tolerancia contra la que se evaluó."""
    name: str
    value: Optional[float]
    tolerance: Optional[float]
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'value': self.value,
            'tolerance': self.tolerance,
            'passed': self.passed,
            'detail': self.detail,
        }


@dataclass
class ResidualReport:
    """Residuo máximo de una identidad discreta."""
    name: str
    residual: float
    tolerance: float
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.residual <= self.tolerance

    def to_check(self) -> CheckRecord:
        return CheckRecord(self.name, self.residual, self.tolerance, self.passed)


@dataclass
class ConvergenceReport:
    """Estudio de dominios crecientes u_R, u_2R, ..."""
    radii: List[float]
    increments: List[float]
    monotone_violation: float
    core_values_at_origin: List[float] = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        return self.monotone_violation <= 1e-12

    @property
    def decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.increments, self.increments[1:]))

    def to_dict(self) -> dict:
        return {
            'radii': self.radii,
            'increments': self.increments,
            'monotone_violation': self.monotone_violation,
            'monotone': self.monotone,
            'decreasing': self.decreasing,
            'core_values_at_origin': self.core_values_at_origin,
        }


@dataclass
class ExperimentResult:
    """Resultado de un experimento: veredictos, valores y artefactos."""
    name: str
    kind: str
    checks: List[CheckRecord] = field(default_factory=list)
    values: Dict[str, Any] = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)
    error: str = ""
    error_kind: str = ""           # "config" o "numerical"
    frames: Dict[str, Any] = field(default_factory=dict, repr=False)

    @property
    def passed(self) -> bool:
        return not self.error and all(c.passed for c in self.checks)

    def add(self, name: str, value, tolerance, passed: bool, detail: str = "") -> CheckRecord:
        record = CheckRecord(name, None if value is None else float(value),
                             None if tolerance is None else float(tolerance),
                             bool(passed), detail)
        self.checks.append(record)
        return record

    def to_dict(self) -> dict:
        out = {
            'name': self.name,
            'kind': self.kind,
            'passed': self.passed,
            'checks': [c.to_dict() for c in self.checks],
            'values': self.values,
            'artifacts': list(self.artifacts),
        }
        if self.error:
            out['error'] = self.error
            out['error_kind'] = self.error_kind
        return out


@dataclass
class RunReport:
    """Reporte completo de una corrida de la CLI."""
    config: Dict[str, Any]
    subcommand: str
    experiments: List[ExperimentResult] = field(default_factory=list)
    provenance: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.experiments)

    def all_checks(self) -> List[tuple]:
        return [(e.name, c) for e in self.experiments for c in e.checks]

    def to_dict(self) -> dict:
        return {
            'subcommand': self.subcommand,
            'passed': self.passed,
            'config': self.config,
            'experiments': [e.to_dict() for e in self.experiments],
            'provenance': self.provenance,
        }
