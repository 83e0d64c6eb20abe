"""Deterministic SVG + CSV rendering of training curves, TAR bars and histograms."""
import csv
import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import EmptyInputError, ParseError  # noqa: E402

_RC = {"svg.hashsalt": "xmatch", "svg.fonttype": "none", "font.size": 9}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def training_curve(history, out_dir):
    if not history.iterations:
        raise EmptyInputError("history is empty")
    out_dir = Path(out_dir)
    with open(out_dir / "training_curve.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(history.to_csv())
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(history.iterations, history.val_tars, marker="o", ms=3, color="C0")
        ax.set_xlabel("iteration")
        ax.set_ylabel("validation TAR", color="C0")
        best = history.best_index
        ax.axvline(history.iterations[best], color="0.6", ls="--", lw=0.8)
        losses = [(i, v) for i, v in zip(history.iterations, history.losses) if not math.isnan(v)]
        if losses:
            ax2 = ax.twinx()
            ax2.plot(*zip(*losses), color="C1", lw=1)
            ax2.set_ylabel("mean batch loss", color="C1")
        fig.tight_layout()
        _save(fig, out_dir / "training_curve.svg")


def load_eval(path):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if "model" not in data or "subsets" not in data:
        raise ParseError(f"{path}: not an eval.json file")
    return data


def tar_bars(evals, out_dir):
    """Grouped bars (one group per subset, one bar per model), one SVG per FAR."""
    if not evals:
        raise EmptyInputError("no evaluations given")
    out_dir = Path(out_dir)
    subsets = sorted({s for e in evals for s in e["subsets"]})
    fars = sorted({r["far_target"] for e in evals for rs in e["subsets"].values() for r in rs})
    rows = []
    for e in evals:
        for s in subsets:
            for r in e["subsets"].get(s, []):
                rows.append((e["model"], s, r["far_target"], r["tar"]))
    with open(out_dir / "tar_by_subset.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "subset", "far_target", "tar"])
        w.writerows(rows)

    width = 0.8 / len(evals)
    x = np.arange(len(subsets))
    paths = []
    for far in fars:
        with plt.rc_context(_RC):
            fig, ax = plt.subplots(figsize=(6.5, 3.5))
            for k, e in enumerate(evals):
                vals = []
                for s in subsets:
                    match = [r["tar"] for r in e["subsets"].get(s, []) if r["far_target"] == far]
                    vals.append(100.0 * match[0] if match else 0.0)
                ax.bar(x + (k - (len(evals) - 1) / 2) * width, vals, width, label=e["model"])
            ax.set_xticks(x)
            ax.set_xticklabels(subsets)
            ax.set_ylabel("TAR (%)")
            ax.set_ylim(0, 100)
            ax.set_title(f"FAR = {100 * far:g}%")
            ax.legend(loc="lower right")
            fig.tight_layout()
            path = out_dir / f"tar_far_{far:g}.svg"
            _save(fig, path)
            paths.append(path)
    return paths


def read_histogram(path):
    """Histogram CSV: ``bin_lo,bin_hi,count``."""
    lo, hi, counts = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["bin_lo", "bin_hi", "count"]:
            raise ParseError(f"{path}: unexpected histogram header", 1)
        for row in reader:
            lo.append(float(row[0]))
            hi.append(float(row[1]))
            counts.append(int(row[2]))
    return np.array(lo), np.array(hi), np.array(counts)


def write_histogram(path, counts, edges):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("bin_lo,bin_hi,count\n")
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            fh.write(f"{float(lo)!r},{float(hi)!r},{int(c)}\n")


def score_histograms(hist_files, out_dir):
    """Overlay normalized histograms; ``hist_files`` maps a legend label to a CSV path."""
    if not hist_files:
        return None
    out_dir = Path(out_dir)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for k, (label, path) in enumerate(sorted(hist_files.items())):
            lo, hi, counts = read_histogram(path)
            total = counts.sum()
            density = counts / (total * (hi - lo)) if total else counts.astype(float)
            ax.step(lo, density, where="post", label=label, color=f"C{k % 10}", lw=1)
        ax.set_xlabel("cosine score")
        ax.set_ylabel("density")
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = out_dir / "score_histograms.svg"
        _save(fig, path)
    return path
