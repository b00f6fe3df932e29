"""Figures written next to the delimited report files.

All functions draw on a fresh figure, save it to ``path`` and close it, so
they are safe to call from a headless CLI run.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _figure(width=6.0, height=None):
    golden = (np.sqrt(5) - 1.0) / 2.0
    fig, ax = plt.subplots(figsize=(width, height or width * golden))
    return fig, ax


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def contingency_heatmap(table, path):
    """Win counts, row method vs column method."""
    k = len(table.methods)
    fig, ax = _figure(1.2 * k + 2.5, 1.0 * k + 1.5)
    data = table.wins.astype(float)
    np.fill_diagonal(data, np.nan)
    im = ax.imshow(data, cmap="Blues", vmin=0, vmax=max(table.total, 1))
    for i in range(k):
        for j in range(k):
            label = "-" if i == j else str(int(table.wins[i, j]))
            ax.text(j, i, label, ha="center", va="center", fontsize=10)
    ax.set_xticks(range(k), table.methods, rotation=45, ha="right")
    ax.set_yticks(range(k), table.methods)
    ax.set_title(f"wins out of {table.total}")
    fig.colorbar(im, ax=ax, fraction=0.046)
    return _save(fig, path)


def mean_ll_bars(reports, path, labels=None):
    """Mean log-likelihood per method, one bar group per report."""
    methods = list(reports[0].methods)
    labels = labels or [str(i) for i in range(len(reports))]
    fig, ax = _figure(max(6.0, 0.9 * len(reports) * len(methods) / 2 + 3))
    width = 0.8 / len(methods)
    x = np.arange(len(reports))
    for i, m in enumerate(methods):
        means = [r.mean(m) for r in reports]
        stds = [r.std(m) for r in reports]
        ax.bar(x + i * width - 0.4 + width / 2, means, width, yerr=stds, label=m, capsize=2)
    ax.set_xticks(x, labels)
    ax.set_ylabel("mean log-likelihood")
    ax.legend(fontsize=8, ncol=min(len(methods), 4))
    return _save(fig, path)


def percent_diff_heatmap(values, row_labels, col_labels, path, title="% difference"):
    """Diverging heat map; positive cells favour the first method."""
    values = np.asarray(values, dtype=float)
    fig, ax = _figure(1.0 * len(col_labels) + 3, 0.5 * len(row_labels) + 2)
    lim = np.nanmax(np.abs(values)) if np.any(np.isfinite(values)) else 1.0
    im = ax.imshow(values, cmap="coolwarm", vmin=-lim, vmax=lim, aspect="auto")
    for i in range(values.shape[0]):
        for j in range(values.shape[1]):
            if np.isfinite(values[i, j]):
                ax.text(j, i, f"{values[i, j]:.1f}", ha="center", va="center", fontsize=8)
    ax.set_xticks(range(len(col_labels)), col_labels)
    ax.set_yticks(range(len(row_labels)), row_labels)
    ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046)
    return _save(fig, path)
