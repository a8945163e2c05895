"""CSV/JSON tables from experiment results."""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path
from typing import Sequence

from ..nn.model import BENCHMARK
from .experiment import ExperimentResult


def benchmark_grid(result: ExperimentResult | None) -> tuple[list[str], list[list]]:
    """Header and rows of benchmark MCS p-values, one row per ticker."""
    if result is None:
        return ["ticker"], []
    horizons = list(result.config.horizons)
    tickers = list(dict.fromkeys(t for t, _ in result.panels))
    header = ["ticker"] + [str(h) for h in horizons]
    rows = []
    for t in tickers:
        row = [t]
        for h in horizons:
            r = result.mcs.get((t, h))
            row.append("" if r is None else r.pvalues[BENCHMARK])
        rows.append(row)
    return header, rows


def membership(result: ExperimentResult | None, alphas: Sequence[float] = (0.05, 0.01)) -> dict[str, dict[float, float | None]]:
    """% of predictable cells (benchmark excluded at ``alpha``) where each model is in the MCS."""
    if result is None:
        return {}
    models = list(dict.fromkeys(m for r in result.mcs.values() for m in r.models))
    out: dict[str, dict[float, float | None]] = {m: {} for m in models}
    for a in alphas:
        cells = [r for r in result.mcs.values() if r.pvalues.get(BENCHMARK, 1.0) < a]
        for m in models:
            relevant = [r for r in cells if m in r.pvalues]
            out[m][a] = None if not relevant else 100.0 * sum(r.pvalues[m] >= a for r in relevant) / len(relevant)
    return out


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def emit_report(result: ExperimentResult | None, outdir: str | os.PathLike, formats: Sequence[str] = ("csv", "json"),
                alphas: Sequence[float] = (0.05, 0.01)) -> list[Path]:
    """Write benchmark p-value grid, membership table and long-format series.

    An empty result (``None`` or no panels) yields header-only files.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    header, rows = benchmark_grid(result)
    mem = membership(result, alphas)
    mem_header = ["model"] + [f"alpha={a}" for a in alphas]
    mem_rows = [[m] + ["" if v[a] is None else v[a] for a in alphas] for m, v in mem.items()]
    long_header = ["ticker", "horizon", "model", "p_mcs"]
    long_rows = []
    panel_header = ["ticker", "horizon", "window", "model", "loss", "n"]
    panel_rows = []
    if result is not None:
        for (t, h), r in sorted(result.mcs.items()):
            long_rows += [[t, h, m, r.pvalues[m]] for m in r.models]
        for (t, h), p in sorted(result.panels.items()):
            valid = [w.index for w in result.windows if w.index not in result.invalid.get((t, h), [])]
            for i, m in enumerate(p.models):
                for j, w in enumerate(valid):
                    n = "" if p.sizes is None else int(p.sizes[j])
                    panel_rows.append([t, h, w, m, float(p.losses[i, j]), n])
    if "csv" in formats:
        for name, hd, rw in (
            ("benchmark_pvalues.csv", header, rows),
            ("membership.csv", mem_header, mem_rows),
            ("mcs_pvalues_long.csv", long_header, long_rows),
            ("loss_panels.csv", panel_header, panel_rows),
        ):
            _write_csv(outdir / name, hd, rw)
            written.append(outdir / name)
    if "json" in formats:
        doc = {
            "benchmark_pvalues": {"header": header, "rows": rows},
            "membership": {m: {str(a): v for a, v in d.items()} for m, d in mem.items()},
            "mcs": {} if result is None else {f"{t}|{h}": r.to_dict() for (t, h), r in sorted(result.mcs.items())},
            "invalid_windows": {} if result is None else {f"{t}|{h}": v for (t, h), v in sorted(result.invalid.items())},
            "universal": bool(result and result.universal),
            "train_sources": {} if result is None else {str(k): list(v) for k, v in result.train_sources.items()},
        }
        path = outdir / "report.json"
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
        written.append(path)
    return written
