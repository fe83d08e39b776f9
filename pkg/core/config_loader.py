"""
Carga y validación de configuraciones de experimentos.
Esquema JSON en data/experiment_config.schema.json; los benchmarks
empaquetados viven en data/benchmarks/.
"""
import json
import os
from functools import lru_cache
from typing import Any, Dict

import jsonschema

from core.coefficient_field import build_field
from core.errors import ConfigError, ConfigSchemaError, ExpressionSyntaxError
from core.expression_parser import parse_expr, to_source
from core.logger import logger
from models.config_models import ExperimentConfig, ExperimentSpec, NumericsConfig
from models.lab_models import LyapunovData, OUParams

DATA_DIR = os.path.join(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'data'
)
SCHEMA_PATH = os.path.join(DATA_DIR, 'experiment_config.schema.json')
BENCHMARK_DIR = os.path.join(DATA_DIR, 'benchmarks')


@lru_cache(maxsize=1)
def _schema() -> Dict[str, Any]:
    with open(SCHEMA_PATH, 'r', encoding='utf-8') as f:
        return json.load(f)


def benchmark_path(name: str) -> str:
    """Ruta de un benchmark empaquetado ('ou' o 'cubic')."""
    return os.path.join(BENCHMARK_DIR, f"{name}.json")


# ---------- Persistencia ----------

def _load(path: str) -> Dict[str, Any]:
    """Lee el JSON crudo desde disco."""
    if not os.path.exists(path):
        raise ConfigError(f"No existe el archivo de configuración: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigSchemaError(f"JSON inválido: {exc.msg} (línea {exc.lineno})", path) from exc


def load_config(path: str) -> ExperimentConfig:
    """
    Carga, valida contra el esquema y parsea una configuración.

    Raises:
        ConfigSchemaError: si el archivo no cumple el esquema
        ExpressionSyntaxError: si una expresión no parsea
        ConfigError: si dt no divide T u otra inconsistencia
    """
    cfg = parse_config(_load(path), path)
    logger.info("Configuración %r cargada desde %s", cfg.name, path)
    return cfg


def save_config(cfg: ExperimentConfig, path: str) -> None:
    """Escribe una configuración a disco con las expresiones re-serializadas."""
    raw: Dict[str, Any] = {
        'name': cfg.name,
        'field': {
            'd': cfg.field.d,
            'T': cfg.field.T,
            'Q': [[to_source(e) for e in row] for row in cfg.field.Q],
            'b': [to_source(e) for e in cfg.field.b],
        },
        'numerics': {
            'R': cfg.numerics.R,
            'h': cfg.numerics.h,
            'dt': cfg.numerics.dt,
            'theta': cfg.numerics.theta,
            'drift_scheme': cfg.numerics.drift_scheme,
        },
        'experiments': [
            {'kind': e.kind, 'name': e.name, 'params': e.params, 'expect': e.expect}
            for e in cfg.experiments
        ],
        'output_dir': cfg.output_dir,
        'seed': cfg.seed,
    }
    if cfg.lyapunov is not None:
        L = cfg.lyapunov
        block = {'W': to_source(L.W), 'tail': L.tail, 'g': {'c': L.c, 'gamma': L.gamma}}
        for key, value in (('R0', L.R0), ('lambda', L.lam), ('a', L.a), ('cc', L.cc)):
            if value is not None:
                block[key] = value
        raw['lyapunov'] = block
    if cfg.ou is not None:
        raw['ou'] = {'a': to_source(cfg.ou.a), 'f': to_source(cfg.ou.f),
                     'q': to_source(cfg.ou.q)}
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(raw, f, indent=2, ensure_ascii=False)


# ---------- Validación ----------

def _schema_errors(raw: Dict[str, Any], path: str) -> None:
    validator = jsonschema.Draft7Validator(_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        first = errors[0]
        where = "/".join(str(p) for p in first.absolute_path) or "<raíz>"
        raise ConfigSchemaError(f"{where}: {first.message}", path)


def _parse(source: str, where: str):
    try:
        return parse_expr(source)
    except ExpressionSyntaxError as exc:
        raise type(exc)(f"{where}: {exc.detail}", exc.offset, exc.source) from exc


def _field(raw: Dict[str, Any]):
    block = raw['field']
    for i, row in enumerate(block['Q']):
        for j, src in enumerate(row):
            _parse(src, f"field/Q/{i}/{j}")
    for i, src in enumerate(block['b']):
        _parse(src, f"field/b/{i}")
    return build_field(block['d'], block['T'], block['Q'], block['b'])


def _lyapunov(block: Dict[str, Any]) -> LyapunovData:
    g = block.get('g', {})
    return LyapunovData(
        W=_parse(block['W'], "lyapunov/W"),
        c=float(g.get('c', 1.0)),
        gamma=float(g.get('gamma', 2.0)),
        R0=block.get('R0'),
        lam=block.get('lambda'),
        a=block.get('a'),
        cc=block.get('cc'),
        tail=bool(block.get('tail', False)),
    )


def _ou(block: Dict[str, Any], period: float) -> OUParams:
    return OUParams(a=_parse(block['a'], "ou/a"), f=_parse(block['f'], "ou/f"),
                    q=_parse(block['q'], "ou/q"), period=period)


def _experiments(raw_list) -> list:
    specs = []
    seen = {}
    for entry in raw_list:
        kind = entry['kind']
        seen[kind] = seen.get(kind, 0) + 1
        name = entry.get('name') or (kind if seen[kind] == 1 else f"{kind}_{seen[kind]}")
        specs.append(ExperimentSpec(kind=kind, name=name,
                                    params=dict(entry.get('params', {})),
                                    expect=dict(entry.get('expect', {}))))
    names = [s.name for s in specs]
    duplicates = {n for n in names if names.count(n) > 1}
    if duplicates:
        raise ConfigError(f"Nombres de experimento repetidos: {sorted(duplicates)}")
    return specs


def parse_config(raw: Dict[str, Any], path: str = "") -> ExperimentConfig:
    """Valida un diccionario crudo y construye la ExperimentConfig."""
    _schema_errors(raw, path)
    field = _field(raw)

    num = raw['numerics']
    numerics = NumericsConfig(R=float(num['R']), h=float(num['h']), dt=float(num['dt']),
                              theta=float(num.get('theta', 1.0)),
                              drift_scheme=num.get('drift_scheme', 'hybrid'))
    steps = field.T / numerics.dt
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise ConfigError(f"dt={numerics.dt} no divide el período T={field.T}")
    try:
        numerics.grid(field.d)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    lyapunov = _lyapunov(raw['lyapunov']) if 'lyapunov' in raw else None
    ou = None
    if 'ou' in raw:
        if field.d != 1:
            raise ConfigError("El bloque 'ou' solo aplica en d=1")
        ou = _ou(raw['ou'], field.T)

    return ExperimentConfig(
        name=raw['name'],
        field=field,
        numerics=numerics,
        experiments=_experiments(raw['experiments']),
        lyapunov=lyapunov,
        ou=ou,
        output_dir=raw.get('output_dir', os.path.join('out', raw['name'])),
        seed=int(raw.get('seed', 0)),
        source=raw,
        path=path,
    )
