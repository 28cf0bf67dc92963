"""Static figures for sweep and field reports."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib import rcParams
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

# stable ids in SVG output so repeated runs give identical files
rcParams["svg.hashsalt"] = "bvlab"

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
}


def _figure(width=4.8, height=3.2):
    fig = Figure(figsize=(width, height))
    FigureCanvasAgg(fig)
    return fig


def _save(fig, path, formats=("png", "svg")) -> list[Path]:
    path = Path(path)
    out = []
    for ext in formats:
        p = path.with_suffix("." + ext)
        meta = {"Software": None} if ext == "png" else {"Date": None}
        fig.savefig(p, dpi=150, bbox_inches="tight", metadata=meta)
        out.append(p)
    return out


def plot_energy_vs_logeps(rows, path, fit=None, prediction=None, title=None) -> list[Path]:
    """Energy against |log eps| with the fitted and predicted lines.

    ``rows`` holds dicts with keys ``eps`` and ``total``; ``fit`` and
    ``prediction`` are (A, B) pairs.
    """
    import matplotlib

    with matplotlib.rc_context(STYLE):
        fig = _figure()
        ax = fig.add_subplot(111)
        x = np.array([abs(np.log(r["eps"])) for r in rows])
        y = np.array([r["total"] for r in rows])
        ax.plot(x, y, "o", color="k", label="measured")
        if len(x):
            xs = np.linspace(x.min() * 0.95, x.max() * 1.05, 50)
            if fit is not None:
                ax.plot(xs, fit[0] * xs + fit[1], "-", color="C0", label=f"fit {fit[0]:.3f}|log ε| {fit[1]:+.3f}")
            if prediction is not None and np.all(np.isfinite(prediction)):
                ax.plot(xs, prediction[0] * xs + prediction[1], "--", color="C3",
                        label=f"predicted {prediction[0]:.3f}|log ε| {prediction[1]:+.3f}")
        ax.set_xlabel("|log ε|")
        ax.set_ylabel("energy")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        ax.grid(alpha=0.3)
        return _save(fig, path)


def plot_boundary_phase(trace, path, vortices=None, title=None) -> list[Path]:
    """Relative boundary phase and normal component along the boundary.

    ``trace`` is a dict with arrays ``t``, ``relative_phase``, ``u_nu``.
    """
    import matplotlib

    with matplotlib.rc_context(STYLE):
        fig = _figure(height=4.0)
        ax1 = fig.add_subplot(211)
        ax2 = fig.add_subplot(212, sharex=ax1)
        t = np.asarray(trace["t"])
        ax1.plot(t, np.asarray(trace["relative_phase"]) / np.pi, color="k")
        ax1.set_ylabel("(arg u - g) / π")
        ax2.plot(t, trace["u_nu"], color="C0")
        ax2.set_ylabel("u · ν")
        ax2.set_xlabel("boundary parameter")
        if vortices is not None:
            for p, d in zip(vortices["positions"], vortices["degrees"]):
                for ax in (ax1, ax2):
                    ax.axvline(p, color="C3" if d > 0 else "C2", lw=0.8, ls=":")
        for ax in (ax1, ax2):
            ax.grid(alpha=0.3)
        if title:
            ax1.set_title(title)
        return _save(fig, path)


def plot_rates(xs, series: dict, path, xlabel="η", title=None) -> list[Path]:
    """Log-log convergence plot of several named series."""
    import matplotlib

    with matplotlib.rc_context(STYLE):
        fig = _figure()
        ax = fig.add_subplot(111)
        for k, (name, ys) in enumerate(series.items()):
            ax.loglog(xs, ys, "o-", color=f"C{k}", label=name)
        ax.set_xlabel(xlabel)
        ax.legend(frameon=False)
        ax.grid(alpha=0.3, which="both")
        if title:
            ax.set_title(title)
        return _save(fig, path)
