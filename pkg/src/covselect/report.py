"""Figure rendering for the benchmark outputs.

Each experiment command writes delimited data first; these helpers render
the matching matplotlib figure next to it.  The computational modules stay
plot-free - this is purely a presentation layer over their outputs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib import patches

from .harness import AccuracyMatrix, MethodComparison

_PNG_META = {"Software": "covselect"}


def render_accuracy_matrix(matrix: AccuracyMatrix, path) -> None:
    """Heatmap of sorted transfer accuracies with intra cells outlined.

    Rows (targets) and columns (sources) are sorted separately by
    descending off-diagonal sums, so the same-subject cells wander off the
    main diagonal.
    """
    vals = matrix.values[np.ix_(matrix.row_order, matrix.col_order)]
    n = vals.shape[0]
    fig, ax = plt.subplots(figsize=(7.2, 6.0))
    im = ax.imshow(
        100.0 * vals, cmap="RdBu", vmin=50.0, vmax=100.0, interpolation="nearest"
    )
    col_pos = {int(j): c for c, j in enumerate(matrix.col_order)}
    for r, i in enumerate(matrix.row_order):
        c = col_pos[int(i)]
        ax.add_patch(
            patches.Rectangle(
                (c - 0.5, r - 0.5), 1, 1, fill=False, edgecolor="black", linewidth=0.9
            )
        )
    ax.set_xlabel("source user (sorted by column sum)")
    ax.set_ylabel("target user (sorted by row sum)")
    ax.set_title("Transfer accuracy, %s targets x sources" % n)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.colorbar(im, ax=ax, label="accuracy [%]")
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_META)
    plt.close(fig)


def render_comparison(comp: MethodComparison, path) -> None:
    """Annotated mean-difference matrix; indistinguishable pairs hatched."""
    n = len(comp.methods)
    diff_pp = 100.0 * comp.mean_diff
    lim = max(1e-9, float(np.nanmax(np.abs(diff_pp))))
    fig, ax = plt.subplots(figsize=(1.05 * n + 2.2, 0.85 * n + 1.8))
    im = ax.imshow(diff_pp, cmap="RdBu", vmin=-lim, vmax=lim, interpolation="nearest")
    for i in range(n):
        for j in range(n):
            if comp.not_different[i, j] and i != j:
                ax.add_patch(
                    patches.Rectangle(
                        (j - 0.5, i - 0.5),
                        1,
                        1,
                        fill=False,
                        hatch="///",
                        edgecolor="gray",
                        linewidth=0.0,
                    )
                )
            ax.text(
                j,
                i,
                f"{diff_pp[i, j]:.2f}",
                ha="center",
                va="center",
                fontsize=8,
            )
    ax.set_xticks(range(n), comp.methods, rotation=45, ha="right")
    ax.set_yticks(range(n), comp.methods)
    ax.set_title("Mean accuracy difference, row - column [pp]\n(hatched: not distinguishable)")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_META)
    plt.close(fig)


def render_sweep(rows: list, path) -> None:
    """Gap to Oracle versus candidate count, one line per method."""
    methods = []
    for m, _k, _g in rows:
        if m not in methods:
            methods.append(m)
    fig, ax = plt.subplots(figsize=(7.0, 4.6))
    for m in methods:
        ks = [k for mm, k, _ in rows if mm == m]
        gaps = [100.0 * g for mm, _, g in rows if mm == m]
        ax.plot(ks, gaps, marker="o", markersize=4, label=m)
    ax.set_xlabel("source data candidates")
    ax.set_ylabel("mean gap to oracle [pp]")
    ax.set_title("Selection quality vs. number of evaluated candidates")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_META)
    plt.close(fig)
