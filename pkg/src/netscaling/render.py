"""Deterministic SVG drawings of flux networks (n = 2 directly, n = 3 projected to x1, x3)."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .core import FluxNetwork

CANVAS = 800.0
STROKE_SCALE = 6.0
MIN_STROKE = 0.05


def _fmt(x: float) -> str:
    s = format(float(x), ".9g")
    return "0" if s == "-0" else s


def _project(net: FluxNetwork) -> np.ndarray:
    n = net.n
    if n == 2:
        return net.positions[:, [0, 1]].reshape(-1, 2)
    if n == 3:
        return net.positions[:, [0, 2]].reshape(-1, 2)
    raise ValueError(f"no projection defined for n={n}; rendering supports n = 2 and n = 3")


def render_svg(net: FluxNetwork, ell: float = 1.0, title: str | None = None,
               notes: list[str] | tuple[str, ...] = ()) -> str:
    """Return the network as an SVG 1.1 document.

    Coordinates are in model units with viewBox [0, ell] x [0, 1]; the y axis
    is flipped so x_n grows upwards. Pipe stroke width scales as f^(1/(n-1)).
    """
    n = net.n
    pts = _project(net)
    height = 1.0
    px_w = CANVAS
    px_h = CANVAS * height / ell
    unit = ell / CANVAS  # one pixel in model units
    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_fmt(px_w)}" '
        f'height="{_fmt(px_h)}" viewBox="0 0 {_fmt(ell)} {_fmt(height)}">',
    ]
    if title:
        out.append(f"<title>{escape(title)}</title>")
    for note in notes:
        out.append(f"<!-- {escape(note).replace('--', '- -')} -->")
    if net.truncation_energy:
        out.append(f"<!-- truncated: remaining tail energy {net.truncation_energy:.16e} -->")
    out.append(f'<g transform="matrix(1 0 0 -1 0 {_fmt(height)})">')
    out.append(f'<g id="axes" stroke="#000000" stroke-width="{_fmt(unit)}" fill="none">')
    out.append(f'<line x1="0" y1="0" x2="{_fmt(ell)}" y2="0"/>')
    out.append(f'<line x1="0" y1="0" x2="0" y2="{_fmt(height)}"/>')
    out.append(f'<line x1="0" y1="{_fmt(height)}" x2="{_fmt(ell)}" y2="{_fmt(height)}"/>')
    out.append("</g>")

    if net.diffuse_node.size:
        out.append('<g id="diffuse" fill="#9ecae1" fill-opacity="0.5" stroke="none">')
        for i in range(net.diffuse_node.size):
            x, z = pts[net.diffuse_node[i]]
            w = net.diffuse_width[i]
            h = net.diffuse_height[i] * net.diffuse_orientation[i]
            if h == 0:
                # spread along the face: a thin rectangle marks where mass lands
                out.append(f'<rect x="{_fmt(x - w / 2)}" y="{_fmt(z - unit)}" width="{_fmt(w)}" '
                           f'height="{_fmt(2 * unit)}"/>')
            else:
                out.append(f'<polygon points="{_fmt(x)},{_fmt(z)} {_fmt(x - w / 2)},{_fmt(z + h)} '
                           f'{_fmt(x + w / 2)},{_fmt(z + h)}"/>')
        out.append("</g>")

    if net.num_edges:
        out.append('<g id="pipes" stroke="#08306b" stroke-linecap="round" fill="none">')
        widths = np.maximum(STROKE_SCALE * unit * net.flux ** (1.0 / (n - 1)), MIN_STROKE * unit)
        for (u, v), sw in zip(net.edges, widths):
            (x1, y1), (x2, y2) = pts[u], pts[v]
            out.append(f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
                       f'stroke-width="{_fmt(sw)}"/>')
        out.append("</g>")
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
