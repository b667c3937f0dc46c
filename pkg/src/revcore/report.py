"""Report rendering: metrics JSON, delimited tables, and matplotlib figures.

Every report path writes machine-readable output (metrics.json, losses.csv,
ablation.csv) and a PNG figure next to it. metrics.json carries only
deterministic quantities; wall-clock and other run facts go to run_info.json.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

FIG_SIZE = (7.0, 4.0)
DPI = 120


@dataclass
class MetricsReport:
    recall: dict[int, float] = field(default_factory=dict)   # k -> recall@k
    dist: dict[int, float] = field(default_factory=dict)     # n -> dist-n
    ppl: float | None = None
    stage_losses: dict[str, float] = field(default_factory=dict)
    wall_clock: float = 0.0

    def __post_init__(self):
        for k, v in self.recall.items():
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"recall@{k}={v} outside [0, 1]")
        if self.ppl is not None and self.ppl < 1.0:
            raise ValueError(f"perplexity {self.ppl} < 1")

    def to_dict(self) -> dict:
        out: dict = {}
        for k in sorted(self.recall):
            out[f"recall@{k}"] = self.recall[k]
        for n in sorted(self.dist):
            out[f"dist{n}"] = self.dist[n]
        if self.ppl is not None:
            out["ppl"] = self.ppl
        out["stage_losses"] = dict(sorted(self.stage_losses.items()))
        return out


def write_metrics(report: MetricsReport, out_dir: str | Path) -> Path:
    """metrics.json + run_info.json + metrics.png."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "metrics.json"
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    (out_dir / "run_info.json").write_text(
        json.dumps({"wall_clock_seconds": report.wall_clock}, indent=2) + "\n"
    )
    _metrics_figure(report, out_dir / "metrics.png")
    return path


def _metrics_figure(report: MetricsReport, path: Path) -> None:
    fig, axes = plt.subplots(1, 2, figsize=FIG_SIZE)
    ks = sorted(report.recall)
    if ks:
        axes[0].bar([f"R@{k}" for k in ks], [report.recall[k] for k in ks],
                    color="steelblue")
        axes[0].set_ylim(0, 1)
        axes[0].set_title("recall")
    ns = sorted(report.dist)
    if ns:
        axes[1].bar([f"dist-{n}" for n in ns], [report.dist[n] for n in ns],
                    color="darkseagreen")
        axes[1].set_title("diversity")
    if report.ppl is not None:
        axes[1].text(0.98, 0.95, f"ppl = {report.ppl:.2f}",
                     transform=axes[1].transAxes, ha="right", va="top")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def write_losses(histories: dict[str, list[float]], out_dir: str | Path) -> Path:
    """losses.csv (stage, epoch, loss) + loss_curves.png."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "losses.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "epoch", "loss"])
        for stage, losses in histories.items():
            for epoch, loss in enumerate(losses):
                writer.writerow([stage, epoch, f"{loss:.6f}"])

    fig, ax = plt.subplots(figsize=FIG_SIZE)
    for stage, losses in histories.items():
        if losses:
            ax.plot(range(len(losses)), losses, marker="o", ms=3, label=stage)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "loss_curves.png", dpi=DPI)
    plt.close(fig)
    return path


ABLATION_COLUMNS = [
    "variant", "strategy", "budget",
    "recall@1", "recall@10", "recall@50",
    "dist2", "dist3", "dist4", "ppl",
]


def write_ablation(rows: list[dict], out_dir: str | Path) -> Path:
    """ablation.csv + ablation.png (one bar group per grid cell)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "ablation.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in ABLATION_COLUMNS})

    labels = [f"{r['variant']}/{r['strategy']}/{r['budget']}" for r in rows]
    fig, ax = plt.subplots(figsize=(max(FIG_SIZE[0], 1.2 * len(rows)), 4.0))
    x = range(len(rows))
    for metric, color in (("dist3", "darkseagreen"), ("dist4", "olive"),
                          ("recall@1", "steelblue")):
        ax.bar([i + 0.25 * ["dist3", "dist4", "recall@1"].index(metric) for i in x],
               [float(r.get(metric) or 0.0) for r in rows],
               width=0.22, label=metric, color=color)
    ax.set_xticks([i + 0.25 for i in x])
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "ablation.png", dpi=DPI)
    plt.close(fig)
    return path
