"""File-only figures: binary PPM heatmaps plus matplotlib PNGs (Agg backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def write_ppm(matrix: np.ndarray, path) -> None:
    """Grayscale P6 image, one pixel per cell, min-max scaled (brighter = larger)."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("write_ppm expects a 2-D matrix")
    lo, hi = float(m.min()), float(m.max())
    t = np.zeros_like(m) if hi <= lo else (m - lo) / (hi - lo)
    data = np.repeat(np.round(t * 255).astype(np.uint8)[..., None], 3, axis=-1)
    h, w = m.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    """Inverse of the P6 header layout used by :func:`write_ppm`; returns ``[H, W, 3]`` uint8."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError(f"{path} is not a binary PPM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)


def heatmap_png(matrix: np.ndarray, path, title: str = "", labels: Sequence[str] | None = None) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(matrix, cmap="viridis", interpolation="nearest")
    fig.colorbar(im, ax=ax)
    if labels is not None and len(labels) <= 40:
        ax.set_xticks(range(len(labels)), labels, rotation=90, fontsize=6)
        ax.set_yticks(range(len(labels)), labels, fontsize=6)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def loss_curve_png(rows: Sequence[dict], path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    steps = [r["step"] for r in rows]
    ax.plot(steps, [r["loss"] for r in rows], label="loss")
    ax.plot(steps, [r["sparsity_term"] for r in rows], label="sparsity term")
    ax.set_xlabel("step")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def inp_bars_png(rows: Sequence[dict], path) -> None:
    plt = _pyplot()
    ks = sorted({r["k"] for r in rows})
    schemes = list(dict.fromkeys(r["scheme"] for r in rows))
    width = 0.8 / max(len(schemes), 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    for j, s in enumerate(schemes):
        by_k = {r["k"]: r for r in rows if r["scheme"] == s}
        xs = [i + j * width for i, k in enumerate(ks) if k in by_k]
        ax.bar(xs, [100 * by_k[k]["mean_acc"] for k in ks if k in by_k], width,
               yerr=[100 * by_k[k]["std"] for k in ks if k in by_k], label=s)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(ks))], [f"{k}-INP" for k in ks])
    ax.set_ylabel("accuracy (%)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
