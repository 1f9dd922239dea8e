"""Delimited and JSON output, plus matplotlib figures written next to them.

Exact values are written as "num/den" with a companion ``<column>_dec``
column holding a 12-significant-digit decimal.  Output is deterministic: no
timestamps, fixed column orders, sorted JSON keys.
"""
import csv
import hashlib
import io
import json
import os
from fractions import Fraction

from .numeric import Enclosure, fmt_decimal, fmt_rational

OUTPUT_ENV = "COUNTABLE_MDP_OUTPUT_DIR"

CONTEXT_COLUMNS = ("experiment", "inputs_digest")
ESTIMATE_COLUMNS = ("family", "strategy", "monitor", "m", "h", "samples", "point", "lo", "hi", "seed")
LOWERBOUND_COLUMNS = ("n", "grid", "s", "t", "d", "bound", "slack")


def inputs_digest(inputs):
    """Short SHA-256 of a JSON-serializable description of a command's inputs."""
    text = json.dumps(inputs, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def cell(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Fraction):
        return fmt_rational(value)
    if isinstance(value, Enclosure):
        return value.text()
    if isinstance(value, float):
        return fmt_decimal(value)
    if value is None:
        return ""
    return str(value)


def expand_columns(columns, rows):
    """Insert a decimal companion after every column that holds exact values."""
    exact = {c for c in columns for r in rows if isinstance(r.get(c), (Fraction, Enclosure))}
    out = []
    for c in columns:
        out.append(c)
        if c in exact:
            out.append(f"{c}_dec")
    return out


def render_csv(columns, rows, context=None):
    """CSV text; `context` (experiment id and inputs digest) leads every row."""
    if context:
        columns = tuple(context) + tuple(columns)
        rows = [{**context, **r} for r in rows]
    cols = expand_columns(columns, rows)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for r in rows:
        line = []
        for c in cols:
            if c.endswith("_dec") and c[:-4] in r and c not in r:
                v = r[c[:-4]]
                line.append(fmt_decimal(v) if v is not None else "")
            else:
                line.append(cell(r.get(c)))
        writer.writerow(line)
    return buf.getvalue()


def _jsonable(value):
    if isinstance(value, Fraction):
        return {"exact": fmt_rational(value), "decimal": fmt_decimal(value)}
    if isinstance(value, Enclosure):
        return {"lo": fmt_rational(value.lo), "hi": fmt_rational(value.hi), "decimal": fmt_decimal(value)}
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def render_json(doc, context=None):
    if context:
        doc = {**context, **doc}
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def resolve_path(path, default_name):
    """Explicit path, else a file in the output directory from the environment, else None (stdout)."""
    if path:
        return path
    base = os.environ.get(OUTPUT_ENV)
    if base:
        os.makedirs(base, exist_ok=True)
        return os.path.join(base, default_name)
    return None


def emit(text, path, stream):
    if path is None:
        stream.write(text)
        return None
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def plot_series(path, x, series, title="", xlabel="", ylabel="", hlines=(), logy=False, bands=None):
    """Line plot of named series over x, saved to `path` (format from its suffix).

    series: {label: values}; hlines: [(y, label)]; bands: {label: (lo, hi)}.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, ys in series.items():
        ax.plot(list(x), [float(y) for y in ys], marker=".", label=label)
        if bands and label in bands:
            lo, hi = bands[label]
            ax.fill_between(list(x), [float(v) for v in lo], [float(v) for v in hi], alpha=0.25)
    for y, label in hlines:
        ax.axhline(float(y), linestyle="--", color="grey", label=label)
    if logy:
        ax.set_yscale("log")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    if series or hlines:
        ax.legend()
    fig.tight_layout()
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    fig.savefig(path, metadata={"Software": None} if path.endswith(".png") else None)
    plt.close(fig)
    return path


def plot_points(path, labels, points, lows, highs, reference=None, title="", ylabel=""):
    """Point estimates with interval bars (one per label), optional reference line."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    xs = list(range(len(labels)))
    pts = [float(p) for p in points]
    err = [[p - float(lo) for p, lo in zip(pts, lows)], [float(hi) - p for p, hi in zip(pts, highs)]]
    ax.errorbar(xs, pts, yerr=err, fmt="o", capsize=4, label="estimate")
    if reference is not None:
        ax.axhline(float(reference), linestyle="--", color="grey", label="reference")
        ax.legend()
    ax.set_xticks(xs)
    ax.set_xticklabels(labels, rotation=15)
    ax.set_title(title)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None} if path.endswith(".png") else None)
    plt.close(fig)
    return path
