"""Static SVG timeline: ground-truth spans, detections and the per-class P curves."""

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")

WIDTH, MARGIN, ROW = 900, 60, 26


def _color(c):
    return PALETTE[c % len(PALETTE)]


def timeline_svg(record, detections, P=None, class_names=None, top_k=20):
    """Render one video. Times are in snippets and labelled in seconds.

    ``detections`` are drawn from the highest confidence down, at most
    ``top_k``, with opacity proportional to relative confidence.
    """
    T, k = record.T, record.snippet_duration_sec
    names = class_names or {}
    x = lambda t: MARGIN + (WIDTH - 2 * MARGIN) * float(t) / max(T, 1)
    dets = sorted(detections, key=lambda d: -d.confidence)[:top_k]
    curve_h = 120 if P is not None else 0
    height = MARGIN + ROW * (2 + len(dets)) + curve_h + 40
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<text x="{MARGIN}" y="20" font-size="14">{escape(record.video_id)}</text>']
    y = MARGIN

    if P is not None:
        P = np.asarray(P)
        top = y
        out.append(f'<rect x="{MARGIN}" y="{top}" width="{WIDTH - 2 * MARGIN}" height="{curve_h - 10}" '
                   f'fill="none" stroke="#ccc"/>')
        out.append(f'<text x="4" y="{top + 12}">P</text>')
        for c in range(P.shape[1]):
            pts = " ".join(f"{x(t + 0.5):.1f},{top + (curve_h - 10) * (1 - P[t, c]):.1f}" for t in range(T))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{_color(c)}" stroke-width="1.2"/>')
        y += curve_h

    out.append(f'<text x="4" y="{y + 14}">GT</text>')
    for g in record.gt_instances or ():
        out.append(f'<rect x="{x(g.start):.1f}" y="{y}" width="{x(g.end) - x(g.start):.1f}" height="{ROW - 6}" '
                   f'fill="{_color(g.label)}"><title>{escape(names.get(g.label, str(g.label)))} '
                   f'[{g.start * k:.2f}s, {g.end * k:.2f}s)</title></rect>')
    for p in record.points:
        out.append(f'<line x1="{x(p.t + 0.5):.1f}" x2="{x(p.t + 0.5):.1f}" y1="{y - 4}" y2="{y + ROW - 2}" '
                   f'stroke="black" stroke-width="1.5"/>')
    y += ROW

    best = dets[0].confidence if dets else 1.0
    out.append(f'<text x="4" y="{y + 14}">Det</text>')
    for d in dets:
        y += ROW
        alpha = 0.25 + 0.75 * d.confidence / best if best > 0 else 1.0
        out.append(f'<rect x="{x(d.start):.1f}" y="{y - ROW + 4}" width="{max(x(d.end) - x(d.start), 1):.1f}" '
                   f'height="{ROW - 8}" fill="{_color(d.label)}" fill-opacity="{alpha:.2f}"/>')
        out.append(f'<text x="{x(d.end) + 4:.1f}" y="{y - 8}">{d.confidence:.2f}</text>')

    y += ROW
    for s in np.linspace(0, T, 6):
        out.append(f'<line x1="{x(s):.1f}" x2="{x(s):.1f}" y1="{y - 8}" y2="{y - 4}" stroke="black"/>')
        out.append(f'<text x="{x(s):.1f}" y="{y + 8}" text-anchor="middle">{s * k:.1f}s</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
