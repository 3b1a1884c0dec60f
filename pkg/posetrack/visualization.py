from pathlib import Path

import altair as alt
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .errors import DomainError
from .metrics import AXES

_UNITS = {'rotation': 'deg', 'translation': 'mm'}
_AXIS_COLORS = {'x': 'tab:red', 'y': 'tab:green', 'z': 'tab:blue'}
_MODEL_STYLES = ['-', '--', ':', '-.']


def _check_kind(kind):
    if kind not in _UNITS:
        raise DomainError("kind must be one of 'rotation' or " +
                          f"'translation' (received {kind})")


def plot_error_accumulation(curves, kind='rotation', ax=None, fmt='.',
                            labelsize=14, ticksize=12, **kwargs):
    """ Plots per-axis error against frame index using matplotlib

        Parameters
        ----------
        curves: dict of str to pandas.DataFrame
            per-model output of `metrics.error_accumulation`
        kind: str
            'rotation' (Euler angle errors) or 'translation'
        ax: matplotlib.axes.Axes (optional)
            axes on which to plot
        fmt: string
            marker format passed to matplotlib; the line style follows the
            model

        Other Parameters
        ----------------
        **kwargs : `matplotlib.pyplot.Line2D` properties, optional

        Returns
        -------
        ax: matplotlib.axes.Axes
    """
    _check_kind(kind)
    if ax is None:
        _, ax = plt.subplots()

    unit = _UNITS[kind]
    for i, (name, curve) in enumerate(curves.items()):
        style = _MODEL_STYLES[i % len(_MODEL_STYLES)]
        for axis in AXES:
            ax.plot(curve.index, curve[f'{kind}_{axis}_{unit}'], fmt + style,
                    color=_AXIS_COLORS[axis], label=f'{name} ({axis})',
                    **kwargs)

    ax.set_xlabel('frame', fontsize=labelsize)
    ax.set_ylabel(f'{kind} error [{unit}]', fontsize=labelsize)
    ax.tick_params(axis='both', which='major', labelsize=ticksize)
    ax.locator_params(axis='y', nbins=5, tight=True)

    # Add a light grid
    ax.grid(visible=True, which='major', axis='both', alpha=.5)
    ax.legend(fontsize=ticksize - 2, ncol=len(curves))
    return ax


def plot_trajectory(poses, gt_poses=None, ax=None, fmt='.-', labelsize=14,
                    ticksize=12, **kwargs):
    """ Plots a top-down (X, Z) view of the object path

        Parameters
        ----------
        poses: list of Pose
            tracked poses
        gt_poses: list of Pose (optional)
            ground truth drawn underneath
        ax: matplotlib.axes.Axes (optional)

        Returns
        -------
        ax: matplotlib.axes.Axes
    """
    if ax is None:
        _, ax = plt.subplots()

    if gt_poses is not None:
        T = np.array([p.T for p in gt_poses])
        ax.plot(T[:, 0], T[:, 2], fmt, color='gray', alpha=.6,
                label='ground truth')
    T = np.array([p.T for p in poses])
    ax.plot(T[:, 0], T[:, 2], fmt, label='tracked', **kwargs)
    ax.plot(T[0, 0], T[0, 2], 'k*', markersize=10)

    ax.set_aspect('equal')
    ax.set_xlabel('X [mm]', fontsize=labelsize)
    ax.set_ylabel('Z [mm]', fontsize=labelsize)
    ax.tick_params(axis='both', which='major', labelsize=ticksize)
    ax.grid(visible=True, which='major', axis='both', alpha=.5)
    ax.legend(fontsize=ticksize)
    return ax


def save_error_plots(curves, out_dir, dpi=100):
    """ Writes rotation_error.png and translation_error.png

    The PNG metadata carries no software version so equal inputs give
    equal bytes.

    Returns
    -------
    list of Path
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for kind in _UNITS:
        fig, ax = plt.subplots(figsize=(6, 4))
        plot_error_accumulation(curves, kind=kind, ax=ax)
        fig.tight_layout()
        path = out_dir / f'{kind}_error.png'
        fig.savefig(path, dpi=dpi, metadata={'Software': None})
        plt.close(fig)
        paths.append(path)
    return paths


def plot_altair(curves, kind='rotation', size=400, background='#FFFFFF'):
    """ Plots per-axis error against frame index as an interactive chart

        Parameters
        ----------
        curves: dict of str to pandas.DataFrame
            per-model output of `metrics.error_accumulation`
        kind: str
            'rotation' or 'translation'
        size: int
            width in pixels
        background: str
            hex color string for chart background (default = '#FFFFFF')

        Returns
        -------
        chart: altair.Chart
    """
    _check_kind(kind)
    unit = _UNITS[kind]

    frames = []
    for name, curve in curves.items():
        for axis in AXES:
            frames.append(pd.DataFrame({
                'frame': np.asarray(curve.index),
                'error': np.asarray(curve[f'{kind}_{axis}_{unit}']),
                'axis': axis, 'model': name}))
    df = pd.concat(frames, ignore_index=True)

    nearest = alt.selection_point(on='mouseover', nearest=True,
                                  fields=['frame'], empty=False)

    lines = alt.Chart(df).mark_line().encode(
        x=alt.X('frame:Q', axis=alt.Axis(title='frame')),
        y=alt.Y('error:Q', axis=alt.Axis(title=f'{kind} error [{unit}]')),
        color=alt.Color('axis:N', legend=alt.Legend(title='Axis')),
        strokeDash='model:N'
    )

    points = alt.Chart(df).mark_circle().encode(
        x='frame:Q',
        y='error:Q',
        color='axis:N',
        size=alt.condition(nearest, alt.value(80), alt.value(20)),
        tooltip=['model:N', 'axis:N', 'frame:Q', 'error:Q']
    ).add_params(
        nearest
    )

    return alt.layer(lines, points).properties(
        width=size, height=size / 2
    ).interactive().configure(background=background)
