"""Standalone SVG rendering of a forecast: history, band, point line, truth."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PANEL_W, PANEL_H, PAD = 480, 160, 30


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def _points(xs, ys) -> str:
    return " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(xs, ys))


def forecast_svg(history: np.ndarray, lower: np.ndarray, upper: np.ndarray, point: np.ndarray, truth: np.ndarray | None = None, columns=None) -> str:
    """One panel per dimension.

    ``history`` is (W, d); ``lower``, ``upper``, ``point`` and ``truth`` are
    (H, d). Each panel holds one ``class="band"`` polygon and one
    ``class="point"`` polyline, plus history and (optionally) truth lines.
    """
    history = np.atleast_2d(history)
    W, d = history.shape
    H = point.shape[0]
    columns = columns or [f"x{i}" for i in range(d)]
    total_h = d * (PANEL_H + PAD) + PAD
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W + 2 * PAD}" height="{total_h}" viewBox="0 0 {PANEL_W + 2 * PAD} {total_h}">',
        "<style>.band{fill:#2ca02c;fill-opacity:0.3;stroke:none}.point{fill:none;stroke:#d62728;stroke-width:1.5}"
        ".history{fill:none;stroke:#1f77b4}.truth{fill:none;stroke:#000;stroke-dasharray:3 2}</style>",
    ]
    span = max(W + H - 1, 1)
    for j in range(d):
        top = PAD + j * (PANEL_H + PAD)
        parts = [history[:, j], lower[:, j], upper[:, j], point[:, j]]
        if truth is not None:
            parts.append(truth[:, j])
        lo = min(float(np.min(p)) for p in parts)
        hi = max(float(np.max(p)) for p in parts)
        if hi - lo < 1e-12:
            lo, hi = lo - 0.5, hi + 0.5

        def sx(t):
            return PAD + PANEL_W * np.asarray(t, dtype=float) / span

        def sy(v, top=top, lo=lo, hi=hi):
            return top + PANEL_H * (1 - (np.asarray(v, dtype=float) - lo) / (hi - lo))

        fx = np.arange(W, W + H)
        out.append(f'<g id="dim-{j}"><text x="{PAD}" y="{top - 6}" font-size="11">{escape(str(columns[j]))}</text>')
        out.append(f'<rect x="{PAD}" y="{top}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#ccc"/>')
        out.append(f'<polyline class="history" points="{_points(sx(np.arange(W)), sy(history[:, j]))}"/>')
        band = _points(np.concatenate([sx(fx), sx(fx[::-1])]), np.concatenate([sy(upper[:, j]), sy(lower[::-1, j])]))
        out.append(f'<polygon class="band" points="{band}"/>')
        if truth is not None:
            out.append(f'<polyline class="truth" points="{_points(sx(fx), sy(truth[:, j]))}"/>')
        out.append(f'<polyline class="point" points="{_points(sx(fx), sy(point[:, j]))}"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
