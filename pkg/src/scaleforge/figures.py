"""Figure rendering for report outputs.

matplotlib is imported lazily and driven through the Agg backend, so
importing this module stays cheap and rendering works headless.  PNGs are
written with fixed metadata to keep repeated runs byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

_PNG_METADATA = {"Software": "scaleforge"}


def _plt():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def save_figure(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    _plt().close(fig)
    return path


def domain_scale_figure(domains: list[tuple[str, np.ndarray, np.ndarray]]):
    """Overlaid per-domain scale densities.

    ``domains`` holds (name, bin edges, mass) triples; mass is plotted as
    a step density against the log-scaled axis.
    """
    plt = _plt()
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, edges, mass in domains:
        edges = np.asarray(edges, dtype=float)
        mass = np.asarray(mass, dtype=float)
        widths = np.diff(edges)
        density = np.where(widths > 0, mass / widths, 0.0)
        ax.stairs(density, edges, label=name)
    ax.set_xlabel("mean patch scale (px$^2$)")
    ax.set_ylabel("density")
    if len(domains) > 1:
        positive = [e for _, e, _ in domains if np.asarray(e)[0] > 0]
        if len(positive) == len(domains):
            ax.set_xscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def shift_matrix_figure(names: list[str], matrix: np.ndarray, title: str):
    """Heatmap of a pairwise shift measure between domains."""
    plt = _plt()
    matrix = np.asarray(matrix, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(matrix, cmap="viridis", vmin=0.0)
    ax.set_xticks(range(len(names)), names, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(names)), names, fontsize=8)
    for i in range(len(names)):
        for j in range(len(names)):
            if np.isfinite(matrix[i, j]):
                ax.text(j, i, f"{matrix[i, j]:.3f}", ha="center", va="center",
                        fontsize=7, color="white")
    ax.set_title(title, fontsize=10)
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    return fig


def reliability_figure(edges: np.ndarray, conf_means: np.ndarray,
                       precisions: np.ndarray, ece_value: float):
    """Reliability diagram with the identity line and ECE annotation."""
    plt = _plt()
    edges = np.asarray(edges, dtype=float)
    centers = 0.5 * (edges[:-1] + edges[1:])
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot([0, 1], [0, 1], ls="--", c="gray", lw=1)
    occupied = ~np.isnan(np.asarray(precisions, dtype=float))
    width = edges[1] - edges[0]
    ax.bar(centers[occupied], np.asarray(precisions)[occupied], width=width * 0.9,
           alpha=0.6, label="precision")
    ax.plot(np.asarray(conf_means)[occupied], np.asarray(precisions)[occupied],
            "o-", c="C1", ms=4, label="observed")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("confidence")
    ax.set_ylabel("precision")
    ax.set_title(f"ECE = {ece_value:.4f}", fontsize=10)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def correlation_figure(pair_hists: list[tuple[str, np.ndarray, np.ndarray]]):
    """Per-image correlation coefficient histograms, one panel per pair."""
    plt = _plt()
    n = len(pair_hists)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.0), squeeze=False)
    for ax, (name, edges, counts) in zip(axes[0], pair_hists):
        ax.stairs(np.asarray(counts, dtype=float), np.asarray(edges, dtype=float),
                  fill=True, alpha=0.7)
        ax.axvline(0.0, c="gray", lw=0.8, ls=":")
        ax.set_title(name.replace("_", " vs "), fontsize=9)
        ax.set_xlabel("Pearson r")
    axes[0][0].set_ylabel("images")
    fig.tight_layout()
    return fig
