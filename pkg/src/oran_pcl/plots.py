"""Minimal SVG line charts for the static-vs-dynamic comparison."""

from __future__ import annotations

from xml.sax.saxutils import escape

PANEL_W, PANEL_H = 560, 220
MARGIN = 48
COLORS = {
    "actual": "#222222",
    "static_limit": "#d62728",
    "dynamic_limit": "#1f77b4",
    "static_under": "#d62728",
    "static_over": "#ff9896",
    "dynamic_under": "#1f77b4",
    "dynamic_over": "#9ecae1",
    "static_cum_non_optimal": "#d62728",
    "dynamic_cum_non_optimal": "#1f77b4",
}
PANELS = (
    ("Actual UEs vs limits", ("actual", "static_limit", "dynamic_limit")),
    ("Static limit: under/over-served UEs", ("static_under", "static_over")),
    ("Adaptive limit: under/over-served UEs", ("dynamic_under", "dynamic_over")),
    ("Cumulative non-optimally served UEs", ("static_cum_non_optimal", "dynamic_cum_non_optimal")),
)


def _fmt(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


def _panel(x0: float, y0: float, title: str, hours, columns: dict[str, list]) -> list[str]:
    w, h = PANEL_W - 2 * MARGIN, PANEL_H - 2 * MARGIN
    lo_h, hi_h = min(hours), max(hours)
    top = max((max(v) for v in columns.values()), default=1) or 1
    sx = lambda t: x0 + MARGIN + (w * (t - lo_h) / (hi_h - lo_h) if hi_h > lo_h else 0)
    sy = lambda v: y0 + MARGIN + h - h * v / top
    out = [
        f'<text x="{_fmt(x0 + PANEL_W / 2)}" y="{_fmt(y0 + MARGIN - 18)}" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<rect x="{_fmt(x0 + MARGIN)}" y="{_fmt(y0 + MARGIN)}" width="{w}" height="{h}" fill="none" stroke="#999"/>',
        f'<text x="{_fmt(x0 + MARGIN - 4)}" y="{_fmt(y0 + MARGIN + 4)}" text-anchor="end" font-size="10">{top}</text>',
        f'<text x="{_fmt(x0 + MARGIN - 4)}" y="{_fmt(y0 + MARGIN + h)}" text-anchor="end" font-size="10">0</text>',
        f'<text x="{_fmt(x0 + MARGIN)}" y="{_fmt(y0 + MARGIN + h + 14)}" font-size="10">hour {lo_h}</text>',
        f'<text x="{_fmt(x0 + MARGIN + w)}" y="{_fmt(y0 + MARGIN + h + 14)}" text-anchor="end" font-size="10">hour {hi_h}</text>',
    ]
    for i, (name, values) in enumerate(columns.items()):
        pts = " ".join(f"{_fmt(sx(t))},{_fmt(sy(v))}" for t, v in zip(hours, values))
        color = COLORS.get(name, "#444")
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        ly = y0 + PANEL_H - MARGIN + 28
        lx = x0 + MARGIN + i * 170
        out.append(f'<line x1="{_fmt(lx)}" y1="{_fmt(ly - 4)}" x2="{_fmt(lx + 16)}" y2="{_fmt(ly - 4)}" stroke="{color}"/>')
        out.append(f'<text x="{_fmt(lx + 20)}" y="{_fmt(ly)}" font-size="10">{escape(name)}</text>')
    return out


def render_compare_svg(header, rows, subtitle: str = "") -> str:
    """Four stacked panels from compare plot rows; pure function of its input."""
    if not rows:
        raise ValueError("nothing to plot")
    col = {name: [r[i] for r in rows] for i, name in enumerate(header)}
    hours = col["hour"]
    height = PANEL_H * len(PANELS) + 40
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W}" height="{height}" viewBox="0 0 {PANEL_W} {height}" font-family="sans-serif">',
        f'<rect width="{PANEL_W}" height="{height}" fill="white"/>',
        f'<text x="{PANEL_W / 2}" y="22" text-anchor="middle" font-size="15">Static vs adaptive slice limits {escape(subtitle)}</text>',
    ]
    for k, (title, names) in enumerate(PANELS):
        parts.extend(_panel(0, 40 + k * PANEL_H, title, hours, {n: col[n] for n in names}))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
