"""Optional figure for benchmark output: per-episode ELBO outperformance heatmap."""

from __future__ import annotations

import numpy as np

from .bench import BASELINES, elbo_table


def outperformance_matrix(records) -> tuple[np.ndarray, list[int]]:
    """Rows are baselines, columns episodes; entries are baseline ELBO / MFVB ELBO."""
    table = elbo_table(records)
    ids = sorted(table["mfvb"])
    mfvb = np.array([table["mfvb"][i] for i in ids])
    rows = [np.array([table[b][i] for i in ids]) / mfvb for b in BASELINES]
    return np.vstack(rows), ids


def render_heatmap(records, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ratio, ids = outperformance_matrix(records)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.15 * len(ids) + 2.0), 2.4))
    im = ax.imshow(ratio, aspect="auto", cmap="viridis")
    ax.set_yticks(range(len(BASELINES)), labels=list(BASELINES))
    ax.set_xlabel("episode")
    ax.set_title("baseline ELBO / MFVB ELBO")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, metadata={"Software": None} if str(path).endswith(".png") else None)
    plt.close(fig)
