"""Report rendering: matplotlib figures and a gnuplot companion script.

Figures are written with stripped metadata so identical runs produce
identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_SAVE_KW = {"dpi": 130, "metadata": {"Software": None}}


def render_error_figure(rows: list, observe: list, path) -> None:
    """Log-log state error vs epsilon, one curve per observation time."""
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    eps = [row["epsilon"] for row in rows]
    for t in observe:
        errs = [row["state_error"][_tkey(t)] for row in rows]
        ax.loglog(eps, errs, "o-", label=f"t = {t:g}")
    ax.set_xlabel(r"$\varepsilon$")
    ax.set_ylabel(r"$L^2$ state error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def render_energy_figure(rows: list, observe: list, path) -> None:
    """Energy gap vs epsilon per observation time."""
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    eps = [row["epsilon"] for row in rows]
    for t in observe:
        gaps = [row["energy_gap"][_tkey(t)] for row in rows]
        ax.loglog(eps, gaps, "s-", label=f"t = {t:g}")
    ax.set_xlabel(r"$\varepsilon$")
    ax.set_ylabel(r"$|E_\varepsilon - E_{hom}|$")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def gnuplot_script(observe: list, csv_name: str = "report.csv") -> str:
    """Gnuplot commands plotting the error columns of the report CSV."""
    lines = [
        "set datafile separator ','",
        "set logscale xy",
        "set xlabel 'epsilon'",
        "set ylabel 'L2 state error'",
        "set key left top",
        "set grid",
    ]
    plots = []
    for i, t in enumerate(observe):
        col = 2 + i
        plots.append(f"'{csv_name}' using 1:{col} with linespoints title 't={t:g}'")
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def _tkey(t: float) -> str:
    return f"{t:.10g}"
