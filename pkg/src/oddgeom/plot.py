"""SVG quiver plots of planar fields with their invariant lines."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import NotPlanar
from .flows import lines, radial_directions
from .frames import VectorField
from .metric import OddMetric

SIZE = 600
MARGIN = 30


def _fmt(v: float) -> str:
    s = f"{v:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def emit_field_plot(m: OddMetric, X: VectorField, grid: int = 21, out=None, center=None,
                    box=None) -> str:
    """SVG with unit arrows of ``X`` on a ``grid x grid`` lattice and red radial lines.

    Points where the field cannot be normalized (poles, zeros) get no arrow.
    The lines are the radial directions at ``center`` (the origin when it lies
    in the box).  Returns the SVG text and writes it to ``out`` if given.
    """
    from . import __version__

    if m.dim != 2:
        raise NotPlanar(f"field plots need a planar metric, got dimension {m.dim}")
    if grid < 2:
        raise ValueError("grid needs at least 2 points per axis")
    (x0, x1), (y0, y1) = box or m.box
    if center is None:
        center = [0.0, 0.0] if x0 <= 0 <= x1 and y0 <= 0 <= y1 else \
            [(x0 + x1) / 2, (y0 + y1) / 2]
    center = np.asarray(center, dtype=float)
    span = SIZE - 2 * MARGIN
    sx = span / (x1 - x0)
    sy = span / (y1 - y0)

    def to_px(p):
        return MARGIN + (p[0] - x0) * sx, SIZE - MARGIN - (p[1] - y0) * sy

    xs = np.linspace(x0, x1, grid)
    ys = np.linspace(y0, y1, grid)
    P = np.array([[x, y] for y in ys for x in xs])
    with np.errstate(all="ignore"):
        V = X.to_coords().program(P)
        norm = np.linalg.norm(V, axis=1)
    arrow = 0.4 * min((x1 - x0), (y1 - y0)) / (grid - 1)

    body = [f'<rect x="{MARGIN}" y="{MARGIN}" width="{span}" height="{span}" '
            f'fill="none" stroke="#999"/>']
    for p, v, nv in zip(P, V, norm):
        if not (np.isfinite(nv) and nv > 1e-12):
            continue
        u = v / nv
        a = p - 0.5 * arrow * u
        b = p + 0.5 * arrow * u
        (ax, ay), (bx, by) = to_px(a), to_px(b)
        # arrow head
        w = np.array([-u[1], u[0]])
        h1 = b - 0.35 * arrow * u + 0.2 * arrow * w
        h2 = b - 0.35 * arrow * u - 0.2 * arrow * w
        (h1x, h1y), (h2x, h2y) = to_px(h1), to_px(h2)
        body.append(f'<polyline points="{_fmt(ax)},{_fmt(ay)} {_fmt(bx)},{_fmt(by)}" '
                    f'stroke="black" fill="none" stroke-width="1"/>')
        body.append(f'<polyline points="{_fmt(h1x)},{_fmt(h1y)} {_fmt(bx)},{_fmt(by)} '
                    f'{_fmt(h2x)},{_fmt(h2y)}" stroke="black" fill="none" stroke-width="1"/>')
    found = lines(radial_directions(m, X, center))
    reach = float(np.hypot(x1 - x0, y1 - y0))
    for d in found:
        a, b = _clip_line(center, d, reach, (x0, x1), (y0, y1))
        if a is None:
            continue
        (ax, ay), (bx, by) = to_px(a), to_px(b)
        slope = round(d[1] / d[0], 6) + 0.0 if abs(d[0]) > 1e-15 else float("inf")
        body.append(f'<polyline class="invariant-line" data-slope="{slope:.4f}" '
                    f'points="{_fmt(ax)},{_fmt(ay)} {_fmt(bx)},{_fmt(by)}" '
                    f'stroke="red" fill="none" stroke-width="2"/>')
    svg = "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" '
        f'viewBox="0 0 {SIZE} {SIZE}">',
        f"<!-- oddgeom {__version__} -->",
        *body,
        "</svg>",
    ]) + "\n"
    if out is not None:
        Path(out).write_text(svg, encoding="utf-8")
    return svg


def _clip_line(c, d, reach, xr, yr):
    """Segment of the line ``c + s d`` inside the rectangle."""
    lo, hi = -reach, reach
    for k, (a, b) in enumerate((xr, yr)):
        if abs(d[k]) < 1e-15:
            if not a <= c[k] <= b:
                return None, None
            continue
        s1, s2 = (a - c[k]) / d[k], (b - c[k]) / d[k]
        lo, hi = max(lo, min(s1, s2)), min(hi, max(s1, s2))
    if lo >= hi:
        return None, None
    return c + lo * d, c + hi * d
