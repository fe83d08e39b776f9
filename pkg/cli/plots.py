"""
Gráficos SVG de los experimentos (backend Agg): curvas de decaimiento,
perfiles de tightness y densidades de la familia de medidas.
"""
import os
from typing import List

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from models.report_models import ExperimentResult


def _save(fig, path: str) -> str:
    fig.tight_layout()
    fig.savefig(path, format='svg')
    plt.close(fig)
    return path


def plot_decay(frame: pd.DataFrame, omega0: float, path: str) -> str:
    """e_k en escala logarítmica frente a kT, con la pendiente de referencia ω0."""
    fig, ax = plt.subplots(figsize=(7, 4))
    curves = [c for c in frame.columns if c not in ('k', 'time')]
    for tag in curves:
        values = frame[tag].to_numpy()
        positive = values > 0
        ax.semilogy(frame['time'][positive], values[positive], marker='.', label=tag)
    if curves and np.isfinite(omega0):
        start = frame[curves[0]].iloc[0]
        if start > 0:
            t = frame['time'].to_numpy()
            ax.semilogy(t, start * np.exp(omega0 * (t - t[0])), 'k--', label='ω0')
    ax.axhspan(1e-10, 1e-3, color='0.9', zorder=0)
    ax.set_xlabel('t - s')
    ax.set_ylabel('error')
    ax.legend()
    return _save(fig, path)


def plot_tightness(frame: pd.DataFrame, path: str) -> str:
    """ρ(ε) por punto base del núcleo."""
    fig, ax = plt.subplots(figsize=(7, 4))
    if 'x2' in frame.columns:
        sc = ax.scatter(frame['x1'], frame['x2'], c=frame['rho'], cmap='viridis')
        fig.colorbar(sc, ax=ax, label='ρ')
        ax.set_ylabel('x2')
    else:
        ax.plot(frame['x1'], frame['rho'], marker='.')
        ax.set_ylabel('ρ(ε)')
    ax.set_xlabel('x1')
    return _save(fig, path)


def plot_measures(frame: pd.DataFrame, path: str) -> str:
    """Densidades w/h^d de cada fase (d=1) o de la fase 0 (d=2)."""
    fig, ax = plt.subplots(figsize=(7, 4))
    if 'x2' in frame.columns:
        first = frame[frame['phase'] == frame['phase'].min()]
        pivot = first.pivot(index='x2', columns='x1', values='density')
        im = ax.imshow(pivot.to_numpy(), origin='lower', aspect='auto',
                       extent=[pivot.columns.min(), pivot.columns.max(),
                               pivot.index.min(), pivot.index.max()])
        fig.colorbar(im, ax=ax, label='densidad')
        ax.set_ylabel('x2')
    else:
        for phase, group in frame.groupby('phase'):
            ax.plot(group['x1'], group['density'], label=f"s={phase:.3g}")
        ax.set_ylabel('densidad')
        ax.legend(fontsize='small')
    ax.set_xlabel('x1')
    return _save(fig, path)


def write_plots(result: ExperimentResult, target: str) -> List[str]:
    """Gráficos disponibles según las tablas del experimento."""
    written = []
    frames = result.frames
    if 'decay_curves' in frames:
        omega0 = float(result.values.get('omega0', float('nan')))
        written.append(plot_decay(frames['decay_curves'], omega0,
                                  os.path.join(target, 'decay_curves.svg')))
    if 'tightness_profile' in frames:
        written.append(plot_tightness(frames['tightness_profile'],
                                      os.path.join(target, 'tightness_profile.svg')))
    if 'measures' in frames:
        written.append(plot_measures(frames['measures'],
                                     os.path.join(target, 'measure_densities.svg')))
    return written
