"""
Interfaz de línea de comandos del laboratorio.

    python main.py <subcomando> --config PATH [--out DIR] [--seed N]
                   [--refine K] [--parallel] [-v]

Códigos de salida: 0 todo pasa, 1 algún chequeo falla, 2 error de
configuración, 3 fallo numérico.
"""
import argparse
import os
import sys
from typing import List, Optional

from core.config_loader import benchmark_path, load_config
from core.errors import ConfigError, NumericalError
from core.experiments import ExperimentRunner
from core.logger import configure_logging, logger
from cli.report_writer import write_report
from models.config_models import SUBCOMMANDS
from models.report_models import RunReport

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='evolab',
        description='Laboratorio numérico de operadores de evolución parabólicos periódicos')
    parser.add_argument('subcommand', choices=SUBCOMMANDS + ('all',),
                        help='Experimentos a ejecutar')
    parser.add_argument('--config', required=True,
                        help="Archivo JSON de configuración, o 'ou' / 'cubic' para los benchmarks")
    parser.add_argument('--out', default=None, help='Directorio de salida')
    parser.add_argument('--seed', type=int, default=None, help='Semilla (reemplaza la del archivo)')
    parser.add_argument('--refine', type=int, default=0,
                        help='Niveles de refinamiento: h -> h/2, dt -> dt/4 por nivel')
    parser.add_argument('--parallel', action='store_true',
                        help='Experimentos independientes en paralelo')
    parser.add_argument('-v', '--verbose', action='count', default=0)
    return parser


def _resolve_config(value: str) -> str:
    if value in ('ou', 'cubic') and not os.path.exists(value):
        return benchmark_path(value)
    return value


def exit_status(report: RunReport) -> int:
    """Errores de configuración priman sobre los numéricos, y estos sobre las fallas."""
    kinds = {e.error_kind for e in report.experiments if e.error}
    if 'config' in kinds:
        return EXIT_CONFIG
    if 'numerical' in kinds:
        return EXIT_NUMERICAL
    return EXIT_PASS if report.passed else EXIT_FAIL


def _summary(report: RunReport, out_dir: str) -> str:
    checks = report.all_checks()
    failed = [f"{name}/{c.name}" for name, c in checks if not c.passed]
    errors = [f"{e.name}: {e.error}" for e in report.experiments if e.error]
    verdict = 'PASS' if report.passed else 'FAIL'
    line = (f"{verdict}: {len(checks) - len(failed)}/{len(checks)} chequeos, "
            f"{len(report.experiments)} experimentos -> {out_dir}")
    details = [f"  falla {f}" for f in failed] + [f"  error {e}" for e in errors]
    return "\n".join([line] + details)


def run(argv: Optional[List[str]] = None) -> int:
    """Ejecuta la CLI y retorna el código de salida."""
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    if args.refine < 0:
        print("error: --refine debe ser >= 0", file=sys.stderr)
        return EXIT_CONFIG

    try:
        cfg = load_config(_resolve_config(args.config))
    except ConfigError as exc:
        logger.error("Configuración inválida: %s", exc)
        print(f"error de configuración: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = args.out or cfg.output_dir
    runner = ExperimentRunner(cfg, seed=args.seed, refine=args.refine, parallel=args.parallel)
    try:
        report = runner.run(args.subcommand)
    except NumericalError as exc:
        print(f"fallo numérico: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    write_report(report, out_dir)
    print(_summary(report, out_dir))
    return exit_status(report)


def main() -> None:
    sys.exit(run())
