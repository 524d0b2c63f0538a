"""Deterministic SVG renderings of run traces.

One figure per metric per scenario variant: minimum voltage and incentive
cost against iterations, every algorithm overlaid, with the baseline value
drawn as a reference line.  The writer emits plain polylines with fixed
number formatting so identical traces produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

WIDTH, HEIGHT = 720, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 16, 24, 40
MAX_POINTS = 1500
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class PlotError(RuntimeError):
    pass


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _scale(lo: float, hi: float, a: float, b: float):
    if hi <= lo:
        hi = lo + 1.0
    k = (b - a) / (hi - lo)
    return lambda x: a + (x - lo) * k


def _downsample(xs: np.ndarray, ys: np.ndarray):
    if xs.shape[0] <= MAX_POINTS:
        return xs, ys
    stride = int(np.ceil(xs.shape[0] / MAX_POINTS))
    idx = np.arange(0, xs.shape[0], stride)
    if idx[-1] != xs.shape[0] - 1:
        idx = np.append(idx, xs.shape[0] - 1)
    return xs[idx], ys[idx]


def _svg(path: Path, series: list[tuple[str, np.ndarray, np.ndarray]],
         hline: float | None, hline_label: str, title: str, ylabel: str):
    ys_all = np.concatenate([s[2] for s in series])
    xs_all = np.concatenate([s[1] for s in series])
    y_lo, y_hi = float(np.min(ys_all)), float(np.max(ys_all))
    if hline is not None:
        y_lo, y_hi = min(y_lo, hline), max(y_hi, hline)
    pad = 0.05 * (y_hi - y_lo or 1.0)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    x_lo, x_hi = float(np.min(xs_all)), float(np.max(xs_all))
    sx = _scale(x_lo, x_hi, MARGIN_L, WIDTH - MARGIN_R)
    sy = _scale(y_lo, y_hi, HEIGHT - MARGIN_B, MARGIN_T)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{MARGIN_L}" y="16" font-family="sans-serif" font-size="13">{title}</text>',
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{HEIGHT - MARGIN_B}" stroke="black"/>',
        f'<line x1="{MARGIN_L}" y1="{HEIGHT - MARGIN_B}" x2="{WIDTH - MARGIN_R}" y2="{HEIGHT - MARGIN_B}" stroke="black"/>',
        f'<text x="8" y="{MARGIN_T + 10}" font-family="sans-serif" font-size="11">{_fmt(y_hi)}</text>',
        f'<text x="8" y="{HEIGHT - MARGIN_B}" font-family="sans-serif" font-size="11">{_fmt(y_lo)}</text>',
        f'<text x="8" y="{MARGIN_T + 30}" font-family="sans-serif" font-size="11">{ylabel}</text>',
        f'<text x="{MARGIN_L}" y="{HEIGHT - 12}" font-family="sans-serif" font-size="11">iteration {_fmt(x_lo)}</text>',
        f'<text x="{WIDTH - 120}" y="{HEIGHT - 12}" font-family="sans-serif" font-size="11">{_fmt(x_hi)}</text>',
    ]
    if hline is not None:
        y = sy(hline)
        out.append(
            f'<line x1="{MARGIN_L}" y1="{_fmt(y)}" x2="{WIDTH - MARGIN_R}" y2="{_fmt(y)}" '
            f'stroke="#555555" stroke-dasharray="6 4"/>'
        )
        out.append(
            f'<text x="{WIDTH - MARGIN_R - 230}" y="{_fmt(y - 4)}" font-family="sans-serif" '
            f'font-size="11">{hline_label} = {hline!r}</text>'
        )
    for color_idx, (name, xs, ys) in enumerate(series):
        xs_d, ys_d = _downsample(xs, ys)
        pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(xs_d, ys_d))
        color = PALETTE[color_idx % len(PALETTE)]
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.2"/>')
        out.append(
            f'<text x="{MARGIN_L + 8 + 130 * color_idx}" y="{MARGIN_T + 12}" '
            f'font-family="sans-serif" font-size="11" fill="{color}">{name}</text>'
        )
    out.append("</svg>")
    path.write_text("\n".join(out) + "\n")


def _read_trace(path: Path):
    iters, minv, cost = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            iters.append(int(row["iteration"]))
            minv.append(float(row["min_voltage"]))
            cost.append(float(row["cost"]))
    return np.asarray(iters, float), np.asarray(minv), np.asarray(cost)


def emit_plots(manifest_path: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Render the voltage and cost figures for every variant in a manifest."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    if not manifest.get("runs"):
        raise PlotError("manifest contains no runs to plot")
    root = manifest_path.parent
    out = Path(out_dir) if out_dir is not None else root / "plots"
    out.mkdir(parents=True, exist_ok=True)
    v_lower = float(manifest["config"]["v_lower"])
    by_variant: dict[str, list[dict]] = {}
    for run in manifest["runs"]:
        by_variant.setdefault(run["variant"], []).append(run)
    baselines = {v["label"]: v for v in manifest["variants"]}
    written: list[Path] = []
    for label, runs in sorted(by_variant.items()):
        series_v, series_c = [], []
        for run in sorted(runs, key=lambda r: r["run_id"]):
            iters, minv, cost = _read_trace(root / run["trace"])
            series_v.append((run["algorithm"], iters, minv))
            series_c.append((run["algorithm"], iters, cost))
        info = baselines[label]
        base = info.get("baseline_value")
        kind = info.get("baseline_kind", "optimum")
        scen = manifest["config"]["scenario"]
        p_v = out / f"{scen}-{label}_min_voltage.svg"
        _svg(p_v, series_v, v_lower, "lower bound", f"{scen}/{label}: minimum voltage",
             "min voltage (p.u.)")
        p_c = out / f"{scen}-{label}_cost.svg"
        _svg(p_c, series_c, base, kind, f"{scen}/{label}: incentive cost", "cost")
        written.extend([p_v, p_c])
    return written
