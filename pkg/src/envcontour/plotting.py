"""Static SVG figures for planar contours (matplotlib, Agg backend)."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import PathPatch  # noqa: E402
from matplotlib.path import Path as MplPath  # noqa: E402
from scipy.spatial import ConvexHull  # noqa: E402

DEFAULT_STYLE = {
    "samples": "0.65",
    "direct": "black",
    "hull": "red",
    "voronoi": "tab:blue",
    "analytic": "tab:green",
    "max_samples": 4000,
}

plt.rcParams["svg.hashsalt"] = "envcontour"


def _closed(p):
    return np.vstack([p, p[:1]])


def band_patch(inner, outer, color, alpha=0.45):
    """Filled region between two nested CCW polygons."""
    inner, outer = _closed(inner), _closed(outer)
    verts = np.vstack([outer, inner[::-1]])
    codes = np.concatenate(
        [
            [MplPath.MOVETO] + [MplPath.LINETO] * (len(outer) - 2) + [MplPath.CLOSEPOLY],
            [MplPath.MOVETO] + [MplPath.LINETO] * (len(inner) - 2) + [MplPath.CLOSEPOLY],
        ]
    )
    return PathPatch(MplPath(verts, codes), facecolor=color, edgecolor=color, alpha=alpha, lw=0.6)


def _subsample(points, k, seed=0):
    if points is None or len(points) <= k:
        return points
    idx = np.random.default_rng(seed).choice(len(points), size=k, replace=False)
    return points[np.sort(idx)]


def draw_panel(ax, samples=None, direct=None, simple=None, corrected=None, analytic=None, gaps=None, style=None, title=None):
    """One comparison panel.  ``gaps`` is ``(angles, differences)`` for the inset."""
    st = {**DEFAULT_STYLE, **(style or {})}
    pts = _subsample(samples, int(st["max_samples"]))
    if pts is not None:
        ax.scatter(pts[:, 0], pts[:, 1], s=1.0, c=st["samples"], lw=0, rasterized=False)
    if direct is not None:
        ax.plot(*_closed(direct).T, color=st["direct"], lw=0.8)
        hull = direct[ConvexHull(direct).vertices]
        ax.plot(*_closed(hull).T, color=st["hull"], lw=0.8)
    if simple is not None and corrected is not None:
        ax.add_patch(band_patch(simple, corrected, st["voronoi"]))
        ax.plot(*_closed(simple).T, color=st["voronoi"], lw=0.6)
    elif simple is not None:
        ax.plot(*_closed(simple).T, color=st["voronoi"], lw=1.0)
    if analytic is not None:
        ax.plot(*_closed(analytic).T, color=st["analytic"], lw=0.6, ls="--")
    ax.set_aspect("equal", adjustable="datalim")
    ax.tick_params(labelsize=6)
    if title:
        ax.set_title(title, fontsize=7)
    if gaps is not None:
        ins = ax.inset_axes([0.62, 0.04, 0.35, 0.22])
        ang, diff = gaps
        ins.plot(np.degrees(ang), diff, color=st["voronoi"], lw=0.6)
        ins.set_xlim(0, 360)
        ins.tick_params(labelsize=4)


def save_svg(fig, path) -> None:
    from .io import atomic_write_bytes

    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def new_figure(rows=1, cols=1, size=3.2):
    fig, axes = plt.subplots(rows, cols, figsize=(size * cols, size * rows), squeeze=False)
    return fig, axes
