"""Matplotlib rendering of scenes, generated bodies, loss curves and metric
summaries.  All figures render to files; no interactive backend is needed."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Patch  # noqa: E402
from mpl_toolkits.mplot3d.art3d import Poly3DCollection  # noqa: E402

from . import body  # noqa: E402
from .scene import Scene  # noqa: E402

_BODY_COLORS = ("tab:red", "tab:purple", "tab:orange", "tab:pink", "tab:brown")


def _box_faces(center, rot, dims):
    sx, sy, sz = np.asarray(dims) / 2.0
    corners = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)])
    corners = corners @ rot.T + center
    idx = [(0, 1, 3, 2), (4, 5, 7, 6), (0, 1, 5, 4), (2, 3, 7, 6), (0, 2, 6, 4), (1, 3, 7, 5)]
    return [corners[list(f)] for f in idx]


def _add_primitive(ax, prim):
    if prim.shape == "box":
        faces = _box_faces(prim.position, prim.rotation, prim.dimensions)
        ax.add_collection3d(Poly3DCollection(faces, alpha=0.25, facecolor="tab:blue",
                                             edgecolor="k", linewidths=0.3))
    elif prim.shape == "cylinder":
        radius, height = prim.dimensions
        theta = np.linspace(0, 2 * np.pi, 20)
        z = np.array([-height / 2, height / 2])
        T, Z = np.meshgrid(theta, z)
        pts = np.stack([radius * np.cos(T), radius * np.sin(T), Z], axis=-1)
        pts = pts @ prim.rotation.T + prim.position
        ax.plot_surface(pts[..., 0], pts[..., 1], pts[..., 2],
                        alpha=0.25, color="tab:blue", linewidth=0)
    else:
        radius = prim.dimensions[0]
        u = np.linspace(0, 2 * np.pi, 16)
        v = np.linspace(0, np.pi, 10)
        x = radius * np.outer(np.cos(u), np.sin(v)) + prim.position[0]
        y = radius * np.outer(np.sin(u), np.sin(v)) + prim.position[1]
        z = radius * np.outer(np.ones_like(u), np.cos(v)) + prim.position[2]
        ax.plot_surface(x, y, z, alpha=0.25, color="tab:green", linewidth=0)


def render_interaction(scene: Scene, meshes: list[body.BodyMesh], path,
                       title: str = "", accepted: list[bool] | None = None) -> None:
    """3D render of the scene primitives and generated bodies to a PNG."""
    fig = plt.figure(figsize=(8, 7))
    ax = fig.add_subplot(111, projection="3d")
    xmin, ymin, xmax, ymax = scene.floor_extent
    ax.plot_surface(*np.meshgrid([xmin, xmax], [ymin, ymax]),
                    np.zeros((2, 2)), alpha=0.1, color="gray")
    for obj in scene.objects:
        for prim in obj.primitives:
            _add_primitive(ax, prim)
        c = obj.centroid()
        ax.text(c[0], c[1], obj.aabb()[1][2] + 0.05, obj.id, fontsize=6)
    for k, mesh in enumerate(meshes):
        verts = mesh.vertices_np()
        ok = accepted[k] if accepted is not None else True
        color = _BODY_COLORS[k % len(_BODY_COLORS)] if ok else "lightgray"
        ax.plot_trisurf(verts[:, 0], verts[:, 1], verts[:, 2],
                        triangles=mesh.faces, color=color, alpha=0.9, linewidth=0)
    span = max(xmax - xmin, ymax - ymin)
    ax.set_xlim(xmin, xmin + span)
    ax.set_ylim(ymin, ymin + span)
    ax.set_zlim(0, span)
    ax.set_title(title, fontsize=9)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_loss_curves(curve: list[dict], path) -> None:
    """Per-term optimization losses over steps."""
    fig, ax = plt.subplots(figsize=(7, 4))
    steps = [row["step"] for row in curve]
    for key in ("total", "contact", "collision", "ibs", "reg", "hh"):
        if key in curve[0]:
            ax.plot(steps, [row[key] for row in curve], label=key, linewidth=1.2)
    ax.set_yscale("symlog", linthresh=1e-6)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8, ncol=3)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_train_log(log: list[dict], path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    steps = [row["step"] for row in log]
    for key in ("loss", "recon_param", "recon_vert", "kl"):
        ax.plot(steps, [row[key] for row in log], label=key, linewidth=1.0)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("value")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_metrics(rows: list[dict], summary: dict, path) -> None:
    """Histograms of per-prompt physical plausibility plus a summary box."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for ax, key, color in ((axes[0], "contact", "tab:green"),
                           (axes[1], "non_collision", "tab:blue")):
        vals = [r[key] for r in rows if r.get(key) is not None]
        ax.hist(vals, bins=np.linspace(0, 1, 21), color=color, alpha=0.8)
        mean = np.mean(vals) if vals else float("nan")
        ax.axvline(mean, color="k", linestyle="--", linewidth=1)
        ax.set_title(f"{key} (mean {mean:.3f})", fontsize=9)
        ax.set_xlabel("score")
    lines = [f"{k}: {v:.4g}" for k, v in summary.items()]
    axes[1].legend(handles=[Patch(color="none", label=s) for s in lines],
                   loc="upper left", fontsize=7, frameon=False,
                   handlelength=0, handletextpad=0)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
