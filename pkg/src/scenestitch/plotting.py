"""Report figures written next to the JSON/CSV outputs."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# PNG metadata without version strings keeps reruns byte-identical
_META = {"Software": None}


def _finish(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def training_curve(rows: Sequence[Mapping], path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    epochs = [r["epoch"] for r in rows]
    ax.plot(epochs[1:], [r["train_loss"] for r in rows[1:]], marker="o", label="train")
    ax.plot(epochs, [r["holdout_loss"] for r in rows], marker="s", label="holdout")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy (nats)")
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def rank_histogram(ranks: Sequence[int], n_relations: int, path) -> Path:
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    counts = [sum(1 for r in ranks if r == k) for k in range(1, n_relations + 1)]
    total = max(len(ranks), 1)
    ax.bar(range(1, n_relations + 1), [c / total for c in counts], color="#4c72b0")
    ax.axhline(1 / n_relations, color="k", ls="--", lw=0.8, label="uniform")
    ax.set_xlabel("rank of true relation")
    ax.set_ylabel("fraction of queries")
    ax.set_xticks(range(1, n_relations + 1))
    ax.legend(frameon=False)
    return _finish(fig, path)


def cycle_rates(reports: Mapping[str, Mapping], path) -> Path:
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    families = ("cycle_rate_right", "cycle_rate_front", "cycle_rate_total")
    width = 0.8 / max(len(reports), 1)
    for i, (method, rep) in enumerate(reports.items()):
        xs = [j + i * width for j in range(len(families))]
        ax.bar(xs, [100 * rep[f] for f in families], width, label=method)
    ax.set_xticks([j + width * (len(reports) - 1) / 2 for j in range(len(families))])
    ax.set_xticklabels(["right", "front", "total"])
    ax.set_ylabel("graphs with a cycle (%)")
    ax.legend(frameon=False)
    return _finish(fig, path)
