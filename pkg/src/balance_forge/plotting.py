"""Matplotlib renderings of the simulation summaries written by ``reproduce``."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}

DIST_STYLE = {
    "normal": dict(color="tab:blue", linestyle="-"),
    "exponential": dict(color="tab:red", linestyle="--"),
    "uniform": dict(color="tab:green", linestyle=":"),
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_balance_by_dist(rows, path):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for dist, style in DIST_STYLE.items():
            sel = sorted((r for r in rows if r["dist"] == dist), key=lambda r: r["n"])
            if sel:
                ax.plot(np.log10([r["n"] for r in sel]), [r["mean_log10_balance"] for r in sel],
                        marker="o", label=dist, **style)
        ax.set_xlabel(r"$\log_{10} n$")
        ax.set_ylabel(r"mean $\log_{10} B$")
        ax.legend(frameon=False)
        _save(fig, path)


def plot_balance_and_switches(rows, path):
    with plt.rc_context(RC):
        fig, (left, right) = plt.subplots(1, 2, figsize=(9, 3.5))
        for p in sorted({r["p"] for r in rows}):
            sel = sorted((r for r in rows if r["p"] == p), key=lambda r: r["n"])
            ln = np.log10([r["n"] for r in sel])
            left.plot(ln, [r["mean_log10_balance"] for r in sel], marker="o", label=f"p={p}")
            right.plot(ln, [r["mean_switches"] for r in sel], marker="o", label=f"p={p}")
        left.set_xlabel(r"$\log_{10} n$")
        left.set_ylabel(r"mean $\log_{10} B$")
        right.set_xlabel(r"$\log_{10} n$")
        right.set_ylabel("mean switches")
        right.legend(frameon=False)
        _save(fig, path)


def plot_randomness(rows, path):
    with plt.rc_context(RC):
        fig, (left, right) = plt.subplots(1, 2, figsize=(9, 3.5))
        greedy = [r for r in rows if r["method"] == "greedy"]
        for p in sorted({r["p"] for r in greedy}):
            sel = sorted((r for r in greedy if r["p"] == p), key=lambda r: r["n"])
            n = [r["n"] for r in sel]
            left.plot(n, [r["entropy"] for r in sel], marker="o", label=f"p={p}")
            right.plot(n, [r["deviation"] for r in sel], marker="o", label=f"p={p}")
        ref = sorted((r for r in rows if r["method"] == "random"), key=lambda r: r["n"])
        if ref:
            n = [r["n"] for r in ref]
            left.plot(n, [r["entropy"] for r in ref], "k:", label="complete")
            right.plot(n, [r["deviation"] for r in ref], "k:", label="complete")
        for ax, label in ((left, "entropy metric"), (right, "deviation metric")):
            ax.set_xscale("log")
            ax.set_xlabel("n")
            ax.set_ylabel(label)
        right.legend(frameon=False)
        _save(fig, path)
