"""Report figures rendered from the emitted CSV artifacts.

The CSV files remain the canonical outputs; these figures are a convenience
layer written next to them by the ``report`` subcommand (and at the end of
a full ``run``).
"""

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import DataError
from .evaluation import DCA_FLAGGED_BAND


def _read_csv(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: report artifact not found")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    return header, rows


def plot_binning_history(history_csv, out_png) -> Path:
    _, rows = _read_csv(history_csv)
    removed = [int(r[0]) for r in rows]
    remaining = [int(r[1]) for r in rows]
    auc = [float(r[2]) for r in rows]

    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax.plot(removed, auc, marker="o", color="#2E86AB")
    best = max(range(len(auc)), key=lambda i: auc[i])
    ax.axvline(removed[best], color="#A23B72", ls="--", lw=1,
               label=f"chosen: {removed[best]} bins removed")
    ax.set_xlabel("uncertainty bins removed")
    ax.set_ylabel("validation AUC (mean over CV folds)")
    ax.set_title("Training-sample quality binning")
    twin = ax.twinx()
    twin.plot(removed, remaining, color="gray", alpha=0.5, ls=":")
    twin.set_ylabel("training samples remaining", color="gray")
    ax.legend(loc="lower right", fontsize=9)
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return Path(out_png)


def plot_dca(dca_csv, out_png) -> Path:
    _, rows = _read_csv(dca_csv)
    thr = [float(r[0]) for r in rows]
    nb_model = [float(r[1]) for r in rows]
    nb_all = [float(r[2]) for r in rows]
    nb_none = [float(r[3]) for r in rows]

    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax.axvspan(*DCA_FLAGGED_BAND, color="#F18F01", alpha=0.12,
               label=f"flagged band {DCA_FLAGGED_BAND[0]:.2f}-{DCA_FLAGGED_BAND[1]:.2f}")
    ax.plot(thr, nb_all, color="gray", ls="--", lw=1.5, label="treat all")
    ax.plot(thr, nb_none, color="black", lw=1.2, label="treat none")
    ax.plot(thr, nb_model, color="#2E86AB", lw=2.2, label="model")
    ax.set_xlabel("threshold probability")
    ax.set_ylabel("net benefit")
    ax.set_title("Decision curve analysis")
    low = min(0.0, min(nb_model)) - 0.02
    ax.set_ylim(max(-0.2, low), max(nb_model + nb_all) + 0.05)
    ax.legend(loc="upper right", fontsize=9)
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return Path(out_png)


def plot_report(report_csv, out_png) -> Path:
    _, rows = _read_csv(report_csv)
    names = [f"{r[0]}@{r[1]}" for r in rows]
    fig, axes = plt.subplots(3, 1, figsize=(max(7, 0.6 * len(rows)), 9), sharex=True)
    metric_cols = (("AUC", 2, 3), ("accuracy", 4, 5), ("MCC", 6, 7))
    x = range(len(rows))
    for ax, (label, vcol, scol) in zip(axes, metric_cols):
        vals = [float(r[vcol]) for r in rows]
        stds = [float(r[scol]) for r in rows]
        ax.bar(x, vals, yerr=stds, capsize=3, color="#2E86AB", alpha=0.85)
        ax.set_ylabel(label)
        ax.grid(axis="y", alpha=0.3, ls=":")
    axes[-1].set_xticks(list(x))
    axes[-1].set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    axes[0].set_title("Test metrics per model family and resolution "
                      "(error bars: std over temporal test partitions)")
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return Path(out_png)


def render_report(outdir) -> list[Path]:
    """Render every figure whose CSV exists in ``outdir``; write summary.txt."""
    outdir = Path(outdir)
    figures_dir = outdir / "figures"
    figures_dir.mkdir(exist_ok=True)
    produced = []
    lines = []

    report_csv = outdir / "report.csv"
    if report_csv.exists():
        produced.append(plot_report(report_csv, figures_dir / "report_metrics.png"))
        _, rows = _read_csv(report_csv)
        best = max(rows, key=lambda r: float(r[2]))
        lines.append(f"models evaluated: {len(rows)}")
        lines.append(f"best test AUC: {float(best[2]):.4f} ({best[0]} @ {best[1]})")

    history_csv = outdir / "binning_history.csv"
    if history_csv.exists():
        produced.append(plot_binning_history(history_csv, figures_dir / "binning_history.png"))
        _, rows = _read_csv(history_csv)
        aucs = [float(r[2]) for r in rows]
        best_i = max(range(len(aucs)), key=lambda i: aucs[i])
        lines.append(
            f"binning: removed {rows[best_i][0]} bin(s), {rows[best_i][1]} training "
            f"samples kept, validation AUC {aucs[best_i]:.4f}"
        )

    dca_csv = outdir / "dca_curve.csv"
    if dca_csv.exists():
        produced.append(plot_dca(dca_csv, figures_dir / "dca_curve.png"))
        _, rows = _read_csv(dca_csv)
        band = [r for r in rows if DCA_FLAGGED_BAND[0] <= float(r[0]) <= DCA_FLAGGED_BAND[1]]
        margin = [float(r[1]) - max(float(r[2]), float(r[3])) for r in band]
        lines.append(
            f"DCA: mean net-benefit margin over best policy in the "
            f"{DCA_FLAGGED_BAND[0]:.2f}-{DCA_FLAGGED_BAND[1]:.2f} band: "
            f"{sum(margin) / len(margin):+.4f}"
        )

    if not produced:
        raise DataError(f"{outdir}: no report CSVs found to render")
    (outdir / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return produced
