"""Standalone SVG bar chart of plain vs planning-informed metric values."""

from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

ROW_HEIGHT = 28
BAR_HEIGHT = 10
LABEL_WIDTH = 360
CHART_WIDTH = 400
PAD = 12
PLAIN_COLOR = "#8c8c8c"
PI_COLOR = "#d9622b"


def _num(x: float) -> str:
    return f"{x:.3f}"


def render_svg(rows: Sequence[dict], title: str = "plain vs planning-informed metrics",
               description: str = "") -> str:
    """One ``<g class="row">`` per report row with a plain bar and a PI bar.

    Bars share one linear scale (largest plain or PI value across rows);
    negative values (possible for NLL metrics) are drawn with zero length
    but keep their numeric label.
    """
    top = max([max(r["plain_value"], r["pi_value"]) for r in rows] + [0.0])
    scale = CHART_WIDTH / top if top > 0 else 0.0
    width = LABEL_WIDTH + CHART_WIDTH + 120 + 2 * PAD
    height = 2 * PAD + 40 + ROW_HEIGHT * len(rows)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="11">',
        f"<title>{escape(title)}</title>",
    ]
    if description:
        out.append(f"<desc>{escape(description)}</desc>")
    out.append(
        f'<g class="legend"><rect x="{PAD}" y="{PAD}" width="10" height="10" fill="{PLAIN_COLOR}"/>'
        f'<text x="{PAD + 14}" y="{PAD + 9}">plain</text>'
        f'<rect x="{PAD + 70}" y="{PAD}" width="10" height="10" fill="{PI_COLOR}"/>'
        f'<text x="{PAD + 84}" y="{PAD + 9}">planning-informed</text></g>'
    )
    y0 = PAD + 40
    for i, r in enumerate(rows):
        y = y0 + i * ROW_HEIGHT
        label = f'{r["scene_id"]} {r["agent_id"]} {r["candidate_id"]} {r["metric_name"]} [{r["scheme"]}]'
        plain_w = max(r["plain_value"], 0.0) * scale
        pi_w = max(r["pi_value"], 0.0) * scale
        x = PAD + LABEL_WIDTH
        out.append(
            f'<g class="row" data-index="{i}">'
            f'<text x="{PAD}" y="{y + BAR_HEIGHT + 3}">{escape(label)}</text>'
            f'<rect x="{x}" y="{y}" width="{_num(plain_w)}" height="{BAR_HEIGHT}" fill="{PLAIN_COLOR}"/>'
            f'<rect x="{x}" y="{y + BAR_HEIGHT + 1}" width="{_num(pi_w)}" height="{BAR_HEIGHT}" fill="{PI_COLOR}"/>'
            f'<text x="{_num(x + max(plain_w, pi_w) + 4)}" y="{y + BAR_HEIGHT + 3}">'
            f'{r["plain_value"]:.4g} / {r["pi_value"]:.4g}</text></g>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
