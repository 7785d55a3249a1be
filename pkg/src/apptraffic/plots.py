"""SVG charts for the analysis and explanation stages.

Output is byte-stable: fixed hash salt, no date stamp, text kept as text, and
a metadata comment inserted after the XML declaration.
"""

import io as _io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {
    "svg.hashsalt": "apptraffic",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
}
CLASS_COLORS = {"Low": "#d95f02", "Medium": "#7570b3", "High": "#1b9e77"}


def save_svg(fig, path, meta=None):
    buf = _io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None}, bbox_inches=None)
    plt.close(fig)
    text = buf.getvalue()
    if meta is not None:
        comment = "<!-- " + json.dumps(meta, sort_keys=True, separators=(",", ":")) + " -->\n"
        head, sep, rest = text.partition("?>\n")
        text = head + sep + comment + rest if sep else comment + text
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _color(label, i):
    return CLASS_COLORS.get(label, f"C{i}")


def class_signature_chart(frame, category, path, meta=None):
    """Mean TWS per class with a 95% band; ``frame`` has class, x, mean, ci."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(8, 3))
        for i, (label, grp) in enumerate(frame.groupby("class", sort=False)):
            x, m, ci = grp["x"].to_numpy(), grp["mean"].to_numpy(), grp["ci"].to_numpy()
            ax.plot(x, m, color=_color(label, i), lw=1.2, label=str(label))
            ax.fill_between(x, m - ci, m + ci, color=_color(label, i), alpha=0.2, lw=0)
        ax.set_xlim(1, 168)
        ax.set_xticks(np.arange(1, 169, 24))
        ax.set_xticklabels(["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"])
        ax.set_ylabel("mean TWS")
        ax.set_title(category)
        ax.legend(loc="upper right", frameon=False)
        fig.tight_layout()
        save_svg(fig, path, meta)


def class_index_chart(frame, title, path, meta=None):
    """Grouped bars of per-class means with 95% error bars; columns class, category, mean, ci."""
    with plt.rc_context(_RC):
        cats = list(dict.fromkeys(frame["category"]))
        classes = list(dict.fromkeys(frame["class"]))
        width = 0.8 / max(len(classes), 1)
        fig, ax = plt.subplots(figsize=(max(6, 0.45 * len(cats)), 3.5))
        x = np.arange(len(cats))
        for i, label in enumerate(classes):
            grp = frame[frame["class"] == label].set_index("category").reindex(cats)
            ax.bar(x + (i - (len(classes) - 1) / 2) * width, grp["mean"], width,
                   yerr=grp["ci"], color=_color(label, i), label=str(label), capsize=1.5)
        ax.set_xticks(x)
        ax.set_xticklabels(cats, rotation=60, ha="right")
        ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        save_svg(fig, path, meta)


def correlation_chart(matrix, path, meta=None):
    with plt.rc_context({**_RC, "axes.grid": False}):
        n = len(matrix)
        fig, ax = plt.subplots(figsize=(0.3 * n + 2, 0.3 * n + 1.5))
        im = ax.imshow(np.ma.masked_invalid(matrix.to_numpy(dtype=float)), cmap="RdBu_r",
                       vmin=-1, vmax=1, interpolation="nearest")
        ax.set_xticks(range(n))
        ax.set_yticks(range(n))
        ax.set_xticklabels(matrix.columns, rotation=90)
        ax.set_yticklabels(matrix.index)
        fig.colorbar(im, ax=ax, shrink=0.7)
        fig.tight_layout()
        save_svg(fig, path, meta)


def shap_summary_chart(points, path, title="", meta=None):
    """Beeswarm-style strip: one row per feature, colour = value percentile."""
    with plt.rc_context(_RC):
        feats = list(dict.fromkeys(points.sort_values("rank")["feature"]))
        fig, ax = plt.subplots(figsize=(7, 0.3 * len(feats) + 1.2))
        rng = np.random.default_rng(0)
        sc = None
        for i, f in enumerate(feats):
            grp = points[points["feature"] == f]
            y = len(feats) - 1 - i + rng.uniform(-0.3, 0.3, len(grp))
            sc = ax.scatter(grp["shap"], y, c=grp["value_percentile"], cmap="coolwarm",
                            vmin=0, vmax=100, s=4, lw=0)
        ax.set_yticks(range(len(feats)))
        ax.set_yticklabels(feats[::-1])
        ax.axvline(0, color="0.5", lw=0.8)
        ax.set_xlabel("Shapley value")
        ax.set_title(title)
        if sc is not None:
            fig.colorbar(sc, ax=ax, label="feature value percentile")
        fig.tight_layout()
        save_svg(fig, path, meta)


def score_chart(table, path, title="", meta=None):
    """Grouped bars of R^2 per target; ``table`` is target x columns."""
    with plt.rc_context(_RC):
        cols = [c for c in table.columns if c != "target"]
        targets = list(table["target"])
        width = 0.8 / max(len(cols), 1)
        fig, ax = plt.subplots(figsize=(max(5, 1.2 * len(targets) + 2), 3.2))
        x = np.arange(len(targets))
        for i, c in enumerate(cols):
            ax.bar(x + (i - (len(cols) - 1) / 2) * width, table[c], width, label=c, color=f"C{i}")
        ax.set_xticks(x)
        ax.set_xticklabels(targets)
        ax.set_ylabel("test R$^2$")
        ax.set_title(title)
        ax.legend(frameon=False, ncol=len(cols))
        fig.tight_layout()
        save_svg(fig, path, meta)
