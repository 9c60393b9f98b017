"""CSV ingestion and SVG funnel-plot output."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
from scipy.special import ndtri

from .errors import CopasBiasError
from .model import Dataset

HEADER = ("study_id", "y", "s")


class DataError(CopasBiasError):
    """Input file could not be parsed into a valid dataset."""


def _data_lines(text: str):
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        yield lineno, line


def read_csv(path) -> Dataset:
    """Read ``study_id,y,s`` rows; ``#`` lines and blank lines are ignored."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    lines = list(_data_lines(text))
    if not lines:
        raise DataError(f"{path}: no data")
    lineno, head = lines[0]
    header = tuple(h.strip() for h in next(csv.reader([head])))
    if header != HEADER:
        raise DataError(f"{path}:{lineno}: expected header {','.join(HEADER)}, got {head!r}")
    ids, ys, ss, seen = [], [], [], set()
    for lineno, line in lines[1:]:
        row = [c.strip() for c in next(csv.reader([line]))]
        if len(row) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        sid, y_txt, s_txt = row
        try:
            y, s = float(y_txt), float(s_txt)
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric value in row {sid!r}") from None
        if not math.isfinite(y):
            raise DataError(f"{path}:{lineno}: effect size must be finite in row {sid!r}")
        if not (math.isfinite(s) and s > 0):
            raise DataError(f"{path}:{lineno}: standard error must be positive in row {sid!r}")
        if sid in seen:
            raise DataError(f"{path}:{lineno}: duplicate study_id {sid!r}")
        seen.add(sid)
        ids.append(sid)
        ys.append(y)
        ss.append(s)
    if len(ys) < 3:
        raise DataError(f"{path}: need at least 3 studies, got {len(ys)}")
    return Dataset(np.array(ys), np.array(ss), tuple(ids))


def write_csv(data: Dataset, path, comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for sid, y, s in zip(data.ids, data.y, data.s):
            w.writerow([sid, repr(float(y)), repr(float(s))])


# -- funnel plot ------------------------------------------------------------

def funnel_svg(data: Dataset, contours=(0.90, 0.95, 0.99), center: float | None = None,
               width: int = 480, height: int = 400):
    """Contour-enhanced funnel plot: effect on x, standard error on an inverted y axis.

    Shaded bands mark where a study would be non-significant at each two-sided
    level around zero. Returns (svg_text, rows) where rows hold the plotted
    pixel coordinates of each study.
    """
    levels = sorted({float(c) for c in contours}, reverse=True)
    if any(not 0 < c < 1 for c in levels):
        raise ValueError("contour levels must lie in (0, 1)")
    left, right, top, bottom = 60, 20, 20, 50
    s_max = float(np.max(data.s)) * 1.05
    z_max = float(ndtri(0.5 + levels[0] / 2)) if levels else 1.96
    x_lo = min(float(np.min(data.y)), -z_max * s_max)
    x_hi = max(float(np.max(data.y)), z_max * s_max)
    pad = 0.05 * (x_hi - x_lo)
    x_lo, x_hi = x_lo - pad, x_hi + pad

    def px(x):
        return left + (x - x_lo) / (x_hi - x_lo) * (width - left - right)

    def py(s):
        return top + s / s_max * (height - top - bottom)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    shades = ["#e6e6e6", "#cccccc", "#b3b3b3", "#999999"]
    for i, c in enumerate(levels):
        z = float(ndtri(0.5 + c / 2))
        pts = [(px(0.0), py(0.0)), (px(z * s_max), py(s_max)), (px(-z * s_max), py(s_max))]
        coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in pts)
        out.append(f'<polygon class="contour" data-level="{c:g}" points="{coords}" '
                   f'fill="{shades[i % len(shades)]}"/>')
    y0, y1 = py(0.0), py(s_max)
    out.append(f'<line x1="{left}" y1="{y1:.2f}" x2="{width - right}" y2="{y1:.2f}" stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{y0:.2f}" x2="{left}" y2="{y1:.2f}" stroke="black"/>')
    for x in np.linspace(x_lo + pad, x_hi - pad, 5):
        out.append(f'<text x="{px(x):.2f}" y="{y1 + 16:.2f}" font-size="10" '
                   f'text-anchor="middle">{x:.2f}</text>')
    for s in np.linspace(0.0, s_max / 1.05, 5):
        out.append(f'<text x="{left - 6}" y="{py(s) + 3:.2f}" font-size="10" '
                   f'text-anchor="end">{s:.2f}</text>')
    out.append(f'<text x="{(left + width - right) / 2:.1f}" y="{height - 12}" font-size="12" '
               f'text-anchor="middle">effect size</text>')
    out.append(f'<text x="14" y="{(top + y1) / 2:.1f}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 14 {(top + y1) / 2:.1f})">standard error</text>')
    if center is not None:
        out.append(f'<line class="center" x1="{px(center):.2f}" y1="{y0:.2f}" '
                   f'x2="{px(center):.2f}" y2="{y1:.2f}" stroke="black" stroke-dasharray="4,3"/>')
    rows = []
    for sid, y, s in zip(data.ids, data.y, data.s):
        cx, cy = px(float(y)), py(float(s))
        rows.append((sid, float(y), float(s), round(cx, 2), round(cy, 2)))
        out.append(f'<circle class="study" cx="{cx:.2f}" cy="{cy:.2f}" r="3.5" '
                   f'fill="black"><title>{escape(sid)}</title></circle>')
    out.append("</svg>")
    return "\n".join(out) + "\n", rows
