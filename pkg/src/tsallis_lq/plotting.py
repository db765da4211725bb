"""Deterministic SVG line charts of normalized gain error against iteration."""
import csv
import io
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ._io import atomic_open  # noqa: E402

REQUIRED = ("iteration", "normalized_gain_error")
_RC = {"svg.hashsalt": "tsallis-lq", "svg.fonttype": "path", "path.simplify": False}


class CsvFormatError(ValueError):
    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


def read_curves(text):
    """Parse history CSV text into ``{label: {seed: [(iteration, error), ...]}}``.

    The series key is the ``label`` column when present and non-empty,
    otherwise ``mode`` plus whichever of q/gamma/tau exist.  Files without
    a ``seed`` column are treated as a single run.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise CsvFormatError("empty file, expected a header row", 1) from None
    missing = [c for c in REQUIRED if c not in header]
    if missing:
        raise CsvFormatError(f"header lacks column(s) {', '.join(missing)}", 1)
    col = {name: i for i, name in enumerate(header)}
    curves = defaultdict(lambda: defaultdict(list))
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != len(header):
            raise CsvFormatError(f"expected {len(header)} fields, found {len(row)}", line)
        try:
            it = int(row[col["iteration"]])
            err = float(row[col["normalized_gain_error"]])
        except ValueError as exc:
            raise CsvFormatError(str(exc), line) from None
        curves[_series_key(row, col)][row[col["seed"]] if "seed" in col else ""].append((it, err))
    return curves


def _series_key(row, col):
    if "label" in col and row[col["label"]]:
        return row[col["label"]]
    parts = [row[col["mode"]]] if "mode" in col else []
    parts += [f"{k}={row[col[k]]}" for k in ("q", "gamma", "tau") if k in col]
    return " ".join(parts) or "error"


def median_curve(runs):
    """Per-iteration median across seeds (iterations present in any run)."""
    by_iter = defaultdict(list)
    for points in runs.values():
        for it, err in points:
            by_iter[it].append(err)
    its = sorted(by_iter)
    return np.array(its), np.array([np.median(by_iter[i]) for i in its])


def render_svg(curves, title=None):
    """Render parsed curves to SVG text; per-seed traces faint, medians bold."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel("normalized gain error")
        for idx, label in enumerate(sorted(curves)):
            color = f"C{idx % 10}"
            for seed in sorted(curves[label]):
                pts = sorted(curves[label][seed])
                ax.plot([p[0] for p in pts], [p[1] for p in pts], color=color, alpha=0.2, lw=0.7)
            x, y = median_curve(curves[label])
            ax.plot(x, y, color=color, lw=1.8, label=label)
        if curves:
            ax.legend(loc="upper right")
        else:
            ax.set_xlim(0, 1)
            ax.set_ylim(1e-6, 1e1)
        if title:
            ax.set_title(title)
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


def emit_plot(csv_path, svg_path=None, title=None):
    """Read a history CSV and write its chart; returns the SVG text."""
    with open(csv_path, newline="") as fh:
        svg = render_svg(read_curves(fh.read()), title)
    if svg_path is not None:
        with atomic_open(svg_path) as fh:
            fh.write(svg)
    return svg
