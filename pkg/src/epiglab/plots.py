"""Figure rendering for the report paths of the CLI.

SVG output is deterministic: hashsalt pinned, no embedded creation date.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .decompose import ContrastRow  # noqa: E402
from .loop import CurveSummary  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "epiglab"

FIG_SIZE = (800 / 72, 500 / 72)  # the svg backend maps inches to 72 units
DPI = 100
_SVG_META = {"Date": None}


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, format="svg", dpi=DPI, metadata=_SVG_META)
    plt.close(fig)


def save_learning_curve_svg(summaries: dict[str, CurveSummary],
                            path: str | Path) -> None:
    """One accuracy line per method, shaded by +/- one standard error."""
    fig, ax = plt.subplots(figsize=FIG_SIZE, dpi=DPI)
    for method in sorted(summaries):
        s = summaries[method]
        ax.plot(s.train_sizes, s.mean_accuracy, label=method, linewidth=1.5)
        ax.fill_between(s.train_sizes,
                        s.mean_accuracy - s.stderr,
                        s.mean_accuracy + s.stderr, alpha=0.2)
    ax.set_xlabel("labels acquired")
    ax.set_ylabel("test accuracy")
    ax.legend(loc="lower right")
    ax.grid(alpha=0.3)
    _save(fig, path)


def save_contrast_scatter_svg(rows: list[ContrastRow], path: str | Path) -> None:
    """Per-input total uncertainty, small training size against large."""
    sizes = sorted({r.size for r in rows})
    fig, ax = plt.subplots(figsize=FIG_SIZE, dpi=DPI)
    if len(sizes) == 2:
        small, large = sizes
        by_key = {(r.seed, r.input_index): r.total for r in rows if r.size == large}
        xs, ys = [], []
        for r in rows:
            if r.size == small and (r.seed, r.input_index) in by_key:
                xs.append(r.total)
                ys.append(by_key[(r.seed, r.input_index)])
        ax.scatter(xs, ys, s=6, alpha=0.4)
        lim = max(xs + ys, default=1.0)
        ax.plot([0, lim], [0, lim], color="grey", linewidth=0.8)
        ax.set_xlabel(f"total uncertainty (nats), n={small}")
        ax.set_ylabel(f"total uncertainty (nats), n={large}")
    ax.grid(alpha=0.3)
    _save(fig, path)


def save_purity_curve_svg(curve: list[tuple[float, float]], target: float,
                          chosen: float | None, path: str | Path) -> None:
    """Pseudo-label purity against the cover radius grid."""
    deltas = [d for d, _ in curve]
    purity = [p for _, p in curve]
    fig, ax = plt.subplots(figsize=FIG_SIZE, dpi=DPI)
    ax.plot(deltas, purity, marker="o", markersize=3)
    ax.axhline(target, color="grey", linewidth=0.8, linestyle="--")
    if chosen is not None:
        ax.axvline(chosen, color="tab:red", linewidth=0.8, linestyle="--",
                   label=f"chosen radius {chosen:g}")
        ax.legend(loc="upper right")
    ax.set_xlabel("cover radius")
    ax.set_ylabel("purity")
    ax.grid(alpha=0.3)
    _save(fig, path)
