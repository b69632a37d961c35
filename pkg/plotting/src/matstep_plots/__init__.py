"""Render convergence figures from matstep trace CSVs.

This package consumes only the trace-file interface of the simulator: CSVs
with columns (k, f, grad_metric, floats_cum, aux) and `# key=value` header
lines.  It never recomputes a metric; the numbers plotted are exactly the
numbers in the files.

A plot spec is a JSON file:

    {
      "series": [{"path": "det_marina_mean.csv", "label": "det-MARINA"}, ...],
      "x": "iterations" | "bytes",
      "y": "grad_metric" | "f",
      "output": "figures/comparison",
      "title": "...",            // optional
      "log_y": true              // optional, default true
    }

Rendering writes <output>.png and <output>.pdf.  One transmitted float is
8 bytes on the bytes axis.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

EXPECTED_COLUMNS = ("k", "f", "grad_metric", "floats_cum", "aux")
BYTES_PER_FLOAT = 8.0

Y_LABELS = {"grad_metric": "squared gradient norm (det-normalized)", "f": "function value"}
X_LABELS = {"iterations": "iteration", "bytes": "bytes transmitted"}


class SchemaError(ValueError):
    """Trace file does not match the expected column schema."""


@dataclass(frozen=True)
class Series:
    label: str
    k: np.ndarray
    f: np.ndarray
    grad_metric: np.ndarray
    floats_cum: np.ndarray

    def x_values(self, axis: str) -> np.ndarray:
        if axis == "iterations":
            return self.k
        if axis == "bytes":
            return self.floats_cum * BYTES_PER_FLOAT
        raise ValueError(f"unknown x axis {axis!r}")

    def y_values(self, axis: str) -> np.ndarray:
        if axis == "grad_metric":
            return self.grad_metric
        if axis == "f":
            return self.f
        raise ValueError(f"unknown y axis {axis!r}")


def load_series(path: str, label: str | None = None) -> Series:
    """Read one trace CSV; raises SchemaError with a column diff on mismatch."""
    header: dict[str, str] = {}
    rows = []
    columns = None
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                header[key.strip()] = val
                continue
            if not line.strip():
                continue
            if columns is None:
                columns = tuple(line.split(","))
                if columns != EXPECTED_COLUMNS:
                    missing = set(EXPECTED_COLUMNS) - set(columns)
                    extra = set(columns) - set(EXPECTED_COLUMNS)
                    raise SchemaError(
                        f"{path}: expected columns {EXPECTED_COLUMNS}, got {columns}"
                        f" (missing {sorted(missing)}, unexpected {sorted(extra)})")
                continue
            parts = line.split(",")
            rows.append((float(parts[0]), float(parts[1]), float(parts[2]), float(parts[3])))
    if columns is None or not rows:
        raise SchemaError(f"{path}: no data rows")
    arr = np.array(rows)
    name = label or header.get("label") or os.path.splitext(os.path.basename(path))[0]
    return Series(name, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


@dataclass(frozen=True)
class PlotSpec:
    series: list[Series]
    x: str
    y: str
    output: str
    title: str | None = None
    log_y: bool = True


def spec_from_json(obj: dict, base_dir: str) -> PlotSpec:
    entries = obj.get("series", [])
    if not entries:
        raise SchemaError("plot spec needs at least one series")
    series = []
    for entry in entries:
        path = entry["path"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        if not os.path.exists(path):
            raise SchemaError(f"series file not found: {path}")
        series.append(load_series(path, entry.get("label")))
    out = obj.get("output", "figure")
    if not os.path.isabs(out):
        out = os.path.join(base_dir, out)
    return PlotSpec(series=series, x=obj.get("x", "iterations"), y=obj.get("y", "grad_metric"),
                    output=out, title=obj.get("title"), log_y=bool(obj.get("log_y", True)))


def build_figure(spec: PlotSpec):
    """Overlay figure for a spec; series are drawn in input order."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for s in spec.series:
        ax.plot(s.x_values(spec.x), s.y_values(spec.y), label=s.label, linewidth=1.4)
    if spec.log_y:
        ax.set_yscale("log")
    ax.set_xlabel(X_LABELS[spec.x])
    ax.set_ylabel(Y_LABELS[spec.y])
    if spec.title:
        ax.set_title(spec.title)
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    return fig, ax


def render(spec: PlotSpec) -> list[str]:
    """Draw the overlay figure and write PNG + PDF next to `spec.output`."""
    fig, _ = build_figure(spec)
    out_dir = os.path.dirname(spec.output)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    paths = [spec.output + ".png", spec.output + ".pdf"]
    for path in paths:
        fig.savefig(path)
    plt.close(fig)
    return paths


def render_file(spec_path: str) -> list[str]:
    with open(spec_path) as fh:
        obj = json.load(fh)
    spec = spec_from_json(obj, os.path.dirname(os.path.abspath(spec_path)))
    return render(spec)


def main(argv=None) -> int:
    args = sys.argv[1:] if argv is None else argv
    if len(args) != 1:
        print("usage: matstep-plot <spec.json>", file=sys.stderr)
        return 2
    try:
        for path in render_file(args[0]):
            print(path)
    except (SchemaError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"plot error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
