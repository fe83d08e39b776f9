"""
Escritura de artefactos de una corrida: report.json, CSV por experimento,
report.xlsx (hoja de resumen por experimento) y verdicts.xml (JUnit).
"""
import json
import math
import os
import re
from typing import Any, Dict, List

import numpy as np
import pandas as pd
from lxml import etree

from cli.plots import write_plots
from core.logger import logger
from models.report_models import ExperimentResult, RunReport


def _jsonable(value: Any) -> Any:
    """Convierte tipos de numpy y flotantes no finitos a JSON estándar."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    return value


def _safe_name(name: str) -> str:
    return re.sub(r'[^A-Za-z0-9_.-]+', '_', name) or 'experimento'


# ---------- Por experimento ----------

def write_experiment(result: ExperimentResult, out_dir: str) -> List[str]:
    """
    CSV de cada tabla del experimento y sus gráficos SVG en un subdirectorio
    propio. Retorna las rutas relativas a out_dir.
    """
    folder = _safe_name(result.name)
    target = os.path.join(out_dir, folder)
    os.makedirs(target, exist_ok=True)
    written = []
    for key, frame in result.frames.items():
        path = os.path.join(target, f"{_safe_name(key)}.csv")
        frame.to_csv(path, index=False)
        written.append(os.path.join(folder, os.path.basename(path)))
    for path in write_plots(result, target):
        written.append(os.path.join(folder, os.path.basename(path)))
    result.artifacts.extend(written)
    return written


# ---------- Resúmenes ----------

def write_json(report: RunReport, path: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(_jsonable(report.to_dict()), f, indent=2, ensure_ascii=False)


def _summary_frame(result: ExperimentResult) -> pd.DataFrame:
    rows = [c.to_dict() for c in result.checks]
    if result.error:
        rows.append({'name': f'error[{result.error_kind}]', 'value': None,
                     'tolerance': None, 'passed': False, 'detail': result.error})
    return pd.DataFrame(rows, columns=['name', 'value', 'tolerance', 'passed', 'detail'])


def write_xlsx(report: RunReport, path: str) -> None:
    """Una hoja de resumen por experimento (nombre truncado a 31 caracteres)."""
    used: Dict[str, int] = {}
    with pd.ExcelWriter(path, engine='openpyxl') as writer:
        overview = pd.DataFrame([{
            'experiment': e.name, 'kind': e.kind, 'passed': e.passed,
            'checks': len(e.checks), 'error': e.error,
        } for e in report.experiments])
        overview.to_excel(writer, sheet_name='resumen', index=False)
        for result in report.experiments:
            base = _safe_name(result.name)[:28]
            used[base] = used.get(base, 0) + 1
            sheet = base if used[base] == 1 else f"{base}_{used[base]}"
            _summary_frame(result).to_excel(writer, sheet_name=sheet, index=False)


def write_junit(report: RunReport, path: str) -> None:
    """verdicts.xml: un <testcase> por chequeo, <failure> si no pasa."""
    checks = report.all_checks()
    errors = [e for e in report.experiments if e.error]
    suite = etree.Element('testsuite', name=f"evolab.{report.subcommand}",
                          tests=str(len(checks) + len(errors)),
                          failures=str(sum(1 for _, c in checks if not c.passed)),
                          errors=str(len(errors)))
    for exp_name, check in checks:
        case = etree.SubElement(suite, 'testcase', classname=exp_name, name=check.name)
        if not check.passed:
            failure = etree.SubElement(case, 'failure',
                                       message=f"valor={check.value}, tolerancia={check.tolerance}")
            failure.text = check.detail
    for result in errors:
        case = etree.SubElement(suite, 'testcase', classname=result.name, name='ejecucion')
        error = etree.SubElement(case, 'error', type=result.error_kind, message=result.error)
        error.text = result.error
    etree.ElementTree(suite).write(path, pretty_print=True, xml_declaration=True,
                                   encoding='UTF-8')


def write_report(report: RunReport, out_dir: str) -> Dict[str, str]:
    """
    Escribe todos los artefactos de la corrida.

    Returns:
        Rutas de report.json, report.xlsx y verdicts.xml
    """
    os.makedirs(out_dir, exist_ok=True)
    for result in report.experiments:
        write_experiment(result, out_dir)
    paths = {
        'json': os.path.join(out_dir, 'report.json'),
        'xlsx': os.path.join(out_dir, 'report.xlsx'),
        'junit': os.path.join(out_dir, 'verdicts.xml'),
    }
    write_json(report, paths['json'])
    write_xlsx(report, paths['xlsx'])
    write_junit(report, paths['junit'])
    logger.info("Artefactos escritos en %s", out_dir)
    return paths
