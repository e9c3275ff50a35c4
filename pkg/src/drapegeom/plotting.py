"""Static report figures: precision curves, refinement traces and per-vertex heatmaps."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import matplotlib.tri as mtri  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_precision_curves(curves, path, xlabel="distance threshold (cm)", title=None):
    """``curves`` maps a label to a (m, 2) array of (threshold, fraction) rows."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, c in curves.items():
        c = np.asarray(c)
        ax.step(c[:, 0], 100 * c[:, 1], where="post", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("% below threshold")
    ax.set_ylim(0, 101)
    ax.grid(alpha=0.3)
    if len(curves) > 1:
        ax.legend()
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_trace(trace, path, title=None):
    """Per-term loss values and the weighted total against the step number (log scale)."""
    steps = [s for s, _ in trace]
    fig, ax = plt.subplots(figsize=(6, 4))
    names = list(trace[0][1].per_term) if trace else []
    for name in names:
        ax.plot(steps, [max(r.per_term[name], 1e-16) for _, r in trace], label=name, lw=1)
    ax.plot(steps, [max(r.total, 1e-16) for _, r in trace], "k", lw=2, label="total")
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def _project(vertices):
    # view along the direction of least spread
    c = vertices - vertices.mean(axis=0)
    _, _, vt = np.linalg.svd(c, full_matrices=False)
    return c @ vt[0], c @ vt[1]


def plot_vertex_field(mesh, values, path, title=None, label=None):
    """Heatmap of a per-vertex scalar over the mesh, projected on its two main axes.

    Non-finite values (e.g. boundary vertices) are drawn grey.
    """
    x, y = _project(mesh.vertices)
    vals = np.asarray(values, dtype=np.float64)
    ok = np.isfinite(vals)
    fill = np.where(ok, vals, np.nanmean(vals[ok]) if ok.any() else 0.0)
    tri = mtri.Triangulation(x, y, mesh.faces)
    # hide faces touching a non-finite vertex
    tri.set_mask(~ok[mesh.faces].all(axis=1))
    fig, ax = plt.subplots(figsize=(5, 4.5))
    ax.triplot(mtri.Triangulation(x, y, mesh.faces), color="0.8", lw=0.2)
    tpc = ax.tripcolor(tri, fill, shading="gouraud", cmap="viridis")
    fig.colorbar(tpc, ax=ax, label=label or "")
    ax.set_aspect("equal")
    ax.set_axis_off()
    if title:
        ax.set_title(title)
    return _save(fig, path)
