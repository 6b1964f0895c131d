"""Plot data (two-column CSV) and PNG figures for run outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def write_xy_csv(path, x: np.ndarray, y: np.ndarray, xname: str, yname: str,
                 header_lines: Sequence[str] = ()) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        for line in header_lines:
            fh.write(line + "\n")
        fh.write(f"{xname},{yname}\n")
        for a, b in zip(x, y):
            fh.write(f"{float(a)!r},{'' if not np.isfinite(b) else repr(float(b))}\n")
    return path


def _save(fig, path, config_text: str = "") -> Path:
    path = Path(path)
    fig.savefig(path, dpi=110, metadata={"Description": config_text} if config_text else None)
    plt.close(fig)
    return path


def plot_series(path, times: np.ndarray, series: Dict[str, np.ndarray],
                bands: Optional[Dict[str, np.ndarray]] = None, title: str = "",
                config_text: str = "", logy: bool = False) -> Path:
    """One panel per series against time; ``bands`` adds a +-band around the curve."""
    names = list(series)
    fig, axes = plt.subplots(len(names), 1, figsize=(6.4, 1.9 * len(names) + 0.6), sharex=True, squeeze=False)
    for ax, name in zip(axes[:, 0], names):
        y = np.asarray(series[name], dtype=float)
        ax.plot(times, y, lw=1.2)
        if bands is not None and name in bands and bands[name] is not None:
            b = np.asarray(bands[name], dtype=float)
            ax.fill_between(times, y - b, y + b, alpha=0.3, lw=0)
        ax.set_ylabel(name)
        if logy and np.all(y[np.isfinite(y)] > 0):
            ax.set_yscale("log")
        ax.grid(alpha=0.3)
    axes[-1, 0].set_xlabel("t")
    if title:
        axes[0, 0].set_title(title)
    fig.tight_layout()
    return _save(fig, path, config_text)


def plot_sweep(path, epsilons: Sequence[float], est_4a: Sequence[float], se_4a: Sequence[float],
               est_4c: Sequence[float], se_4c: Sequence[float], config_text: str = "") -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    for ax, y, e, label in ((axes[0], est_4a, se_4a, "eps * E int |u|_H2^2"),
                            (axes[1], est_4c, se_4c, "E int |u|_H1(-k,k)^2")):
        e = [0.0 if v is None or not np.isfinite(v) else v for v in e]
        ax.errorbar(epsilons, y, yerr=e, marker="o", capsize=3)
        ax.set_xscale("log")
        ax.set_xlabel("epsilon")
        ax.set_title(label, fontsize=9)
        ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path, config_text)
