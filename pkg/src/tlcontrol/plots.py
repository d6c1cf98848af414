"""SVG figures for a finished run.

Rendering uses the Agg backend and fixed SVG metadata so repeated runs give
identical files.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "tlcontrol", "font.size": 9, "axes.grid": True, "grid.alpha": 0.3}
_META = {"Date": None, "Creator": None}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata=_META, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_time_series(result, path: Path) -> Path:
    log, spec = result.log, result.spec
    t = log.times
    names = list(spec.system.state_names)
    cnames = list(spec.system.control_names)
    hnames = [c.name for c in spec.safety_chains]
    n_rows = len(names) + len(cnames) + len(hnames)
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(n_rows, 1, sharex=True, figsize=(6.5, 1.3 * n_rows + 0.6))
        axes = np.atleast_1d(axes)
        k = 0
        for i, n in enumerate(names):
            axes[k].plot(t, log.states[:, i], lw=1.0)
            axes[k].set_ylabel(n)
            k += 1
        box = spec.system.control_box
        for i, n in enumerate(cnames):
            axes[k].step(t, log.controls[:, i], where="post", lw=1.0)
            for bound in (box.u_min[i], box.u_max[i]):
                axes[k].axhline(bound, color="0.5", ls=":", lw=0.8)
            axes[k].set_ylabel(n)
            k += 1
        for n in hnames:
            axes[k].plot(t, log.h_values[n], lw=1.0, color="C3")
            axes[k].axhline(0.0, color="k", lw=0.6)
            axes[k].set_ylabel(f"h_{n}")
            k += 1
        for te in log.event_times:
            axes[-1].axvline(te, color="C2", lw=0.3, alpha=0.4)
        axes[-1].set_xlabel("t [s]")
        fig.suptitle(f"{spec.name} / {result.config.method.kind.value}")
        return _save(fig, path)


def plot_psi1(result, rows: np.ndarray, path: Path) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 4.0))
        sc = ax.scatter(rows[:, 1], rows[:, 2], c=rows[:, 0], s=4, cmap="viridis")
        ax.axhline(0.0, color="k", lw=0.6)
        ax.axvline(0.0, color="k", lw=0.6)
        ax.set_xlabel("Re psi1")
        ax.set_ylabel("Im psi1")
        fig.colorbar(sc, ax=ax, label="t [s]")
        return _save(fig, path)


def plot_robot_path(result, path: Path) -> Path:
    log, p = result.log, result.spec.params
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.5, 3.8))
        ax.plot(log.states[:, 0], log.states[:, 1], lw=1.2, label="path")
        ax.add_patch(plt.Circle(p.obstacle, p.r_obstacle, color="0.6", alpha=0.6, label="obstacle"))
        ax.add_patch(plt.Circle(p.obstacle, p.r, fill=False, ls="--", color="C3", label="clearance"))
        ax.plot(*p.destination, "k*", ms=9, label="destination")
        ax.plot(log.states[0, 0], log.states[0, 1], "go", ms=4)
        ax.set_aspect("equal")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.legend(loc="lower right", fontsize=7)
        return _save(fig, path)


def render_run(result, psi_rows: np.ndarray, out_dir) -> list[Path]:
    out = Path(out_dir)
    paths = [plot_time_series(result, out / "time_series.svg"),
             plot_psi1(result, psi_rows, out / "psi1_plane.svg")]
    if result.spec.name == "robot":
        paths.append(plot_robot_path(result, out / "xy_path.svg"))
    return paths
