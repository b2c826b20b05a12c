"""Render the experiment CSVs to SVG files. Presentation only, no computation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import MalformedCsv

__all__ = ["PlotSpec", "emit_plot"]


@dataclass(frozen=True)
class PlotSpec:
    """What to draw and where to put it; kind one of fig_a, fig_b, fig_c."""

    kind: str
    out_path: Path | None = None
    title: str | None = None


def _read_csv(csv_path: Path) -> tuple[list[str], list[dict]]:
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise MalformedCsv(f"{csv_path} has no header row")
        rows = list(reader)
    if not rows:
        raise MalformedCsv(f"{csv_path} has a header but no data rows")
    return list(reader.fieldnames), rows


def _column(rows: list[dict], name: str, csv_path: Path) -> list[float]:
    try:
        return [float(r[name]) if r[name] not in ("", None) else float("nan") for r in rows]
    except KeyError:
        raise MalformedCsv(f"{csv_path} is missing required column {name!r}") from None


def emit_plot(csv_path: str | Path, spec: PlotSpec) -> Path:
    """Draw one figure from a CSV produced by the experiment harness."""
    csv_path = Path(csv_path)
    _, rows = _read_csv(csv_path)
    out = spec.out_path or csv_path.with_suffix(".svg")
    fig, ax = plt.subplots(figsize=(5.0, 3.4))

    if spec.kind == "fig_a":
        v = _column(rows, "v_max", csv_path)
        mean = _column(rows, "mean_profit", csv_path)
        lo = _column(rows, "min_profit", csv_path)
        hi = _column(rows, "max_profit", csv_path)
        yerr = [
            [m - a for m, a in zip(mean, lo)],
            [b - m for m, b in zip(mean, hi)],
        ]
        ax.errorbar(v, mean, yerr=yerr, fmt="o-", capsize=3, label="profit")
        ax.set_xlabel("battery capacity (units)")
        ax.set_ylabel("profit per period ($)")
        ax2 = ax.twinx()
        ax2.plot(v, _column(rows, "mean_price", csv_path), "s--", color="tab:red", label="price")
        ax2.set_ylabel("mean ride price ($)")
        ax.legend(loc="upper left")
        ax2.legend(loc="lower right")
    elif spec.kind == "fig_b":
        v = _column(rows, "v_max", csv_path)
        ax.plot(v, _column(rows, "rebalancers_per_trip", csv_path), "o-")
        ax.set_xlabel("battery capacity (units)")
        ax.set_ylabel("empty trips per loaded trip")
    elif spec.kind == "fig_c":
        n = _column(rows, "n", csv_path)
        approx = _column(rows, "approx_cost", csv_path)
        exact = _column(rows, "exact_cost", csv_path)
        ci = _column(rows, "ci_half", csv_path)
        pts = sorted(
            (x, a, e, c) for x, a, e, c in zip(n, approx, exact, ci) if e == e  # keep measured rows
        )
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "-", label="approximation")
        ax.errorbar(
            [p[0] for p in pts],
            [p[2] for p in pts],
            yerr=[p[3] for p in pts],
            fmt="o",
            capsize=3,
            label="simulation",
        )
        mins = [(x, a) for x, a, e, _ in zip(n, approx, exact, ci) if e != e]
        if mins:
            ax.plot([mins[0][0]], [mins[0][1]], "r*", markersize=12, label="approx. minimum")
        ax.set_xlabel("fraction of units bought at regular nodes")
        ax.set_ylabel("cost per unit ($)")
        ax.legend()
    else:
        plt.close(fig)
        raise ValueError(f"unknown plot kind {spec.kind!r}")

    if spec.title:
        ax.set_title(spec.title)
    fig.tight_layout()
    fig.savefig(out, format="svg")
    plt.close(fig)
    return Path(out)
