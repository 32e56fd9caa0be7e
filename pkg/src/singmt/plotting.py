"""Two-column data files and quick-look PNGs for CLI runs."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def write_dat(path, x, y, header: str = "") -> Path:
    """Whitespace-separated ``x y`` columns; ``header`` becomes a ``#`` comment line."""
    path = Path(path)
    data = np.column_stack([np.asarray(x, dtype=float), np.asarray(y, dtype=float)])
    np.savetxt(path, data, fmt="%.17g", header=header, comments="# ")
    return path


def plot_xy(path, x, y, xlabel: str = "x", ylabel: str = "y", title: str = "",
            logx: bool = False, hline=None) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    ax.plot(x, y, marker="o" if len(x) < 30 else None, lw=1.2)
    if hline is not None:
        ax.axhline(hline, color="0.5", ls="--", lw=0.8)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def emit(out_dir, name: str, x, y, xlabel: str, ylabel: str, **kw):
    """Write ``name.dat`` and ``name.png`` into ``out_dir``."""
    out_dir = Path(out_dir)
    write_dat(out_dir / f"{name}.dat", x, y, header=f"{xlabel} {ylabel}")
    plot_xy(out_dir / f"{name}.png", x, y, xlabel, ylabel, **kw)
