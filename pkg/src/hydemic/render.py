"""Static figure output: class palette, PPM maps and small hand-written SVG panels."""

from __future__ import annotations

import colorsys
from pathlib import Path

import numpy as np

GROUND_RGB = (64, 64, 64)


def class_palette(class_names):
    """One RGB triple per class: evenly spaced hues, ``ground`` dark gray."""
    names = list(class_names)
    minerals = [n for n in names if n != "ground"]
    palette, k = [], 0
    for name in names:
        if name == "ground":
            palette.append(GROUND_RGB)
            continue
        r, g, b = colorsys.hsv_to_rgb(k / max(len(minerals), 1), 0.75, 0.95)
        palette.append((round(r * 255), round(g * 255), round(b * 255)))
        k += 1
    return palette


def write_ppm(classes, palette, path):
    grid = np.asarray(classes)
    h, w = grid.shape
    lut = np.asarray(palette, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(lut[grid].tobytes())


def _hex(rgb):
    return "#%02x%02x%02x" % tuple(rgb)


def _svg(width, height, body, title):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n<title>{title}</title>\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n' + "\n".join(body) + "\n</svg>\n")


def svg_class_map(classes, palette, path, title="Predicted mineral map", scale=4):
    grid = np.asarray(classes)
    h, w = grid.shape
    body = []
    for y in range(h):
        row = grid[y]
        x0 = 0
        for x in range(1, w + 1):
            if x == w or row[x] != row[x0]:
                body.append(f'<rect x="{x0 * scale}" y="{y * scale}" width="{(x - x0) * scale}" '
                            f'height="{scale}" fill="{_hex(palette[row[x0]])}"/>')
                x0 = x
    Path(path).write_text(_svg(w * scale, h * scale, body, title), encoding="utf-8")


def svg_summary_bars(n_correct, n_incorrect, path):
    total = max(n_correct + n_incorrect, 1)
    body = []
    for i, (label, n, color) in enumerate((("correct", n_correct, "#2a9d8f"),
                                           ("incorrect", n_incorrect, "#e63946"))):
        hgt = 200.0 * n / total
        x = 40 + i * 100
        body.append(f'<rect x="{x}" y="{230 - hgt:.2f}" width="60" height="{hgt:.2f}" fill="{color}"/>')
        body.append(f'<text x="{x + 30}" y="248" text-anchor="middle" font-size="12">{label}</text>')
        body.append(f'<text x="{x + 30}" y="{224 - hgt:.2f}" text-anchor="middle" font-size="12">{n}</text>')
    Path(path).write_text(_svg(260, 260, body, "Pixel-wise classification summary"), encoding="utf-8")


def _axes(width, height, pad, x_label, y_label):
    return [
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - 10}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="10" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="{height - 8}" text-anchor="middle" font-size="12">{x_label}</text>',
        f'<text x="12" y="{height / 2:.0f}" font-size="12" transform="rotate(-90 12 {height / 2:.0f})" '
        f'text-anchor="middle">{y_label}</text>',
    ]


def svg_confidence_scatter(records, path, width=640, height=320, pad=40):
    n = max(len(records), 1)
    lo = min((r.confidence_percent for r in records), default=0.0)
    lo = min(lo, 99.0)
    body = _axes(width, height, pad, "pixel index", "confidence (%)")
    sx = (width - pad - 10) / n
    sy = (height - pad - 10) / max(100.0 - lo, 1e-9)
    # correct first so errors draw on top
    for want in (True, False):
        color = "#2a9d8f" if want else "#e63946"
        for r in records:
            if r.correct == want:
                cx = pad + r.pixel_index * sx
                cy = height - pad - (r.confidence_percent - lo) * sy
                body.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="1" fill="{color}"/>')
    Path(path).write_text(_svg(width, height, body, "Prediction confidence by pixel"), encoding="utf-8")


def svg_density_histograms(hists, path, width=480, height=320, pad=40):
    hists = [hg for hg in hists if hg.n > 0]
    body = _axes(width, height, pad, "confidence (%)", "density")
    if hists:
        x_lo = min(hg.bin_edges[0] for hg in hists)
        x_hi = max(hg.bin_edges[-1] for hg in hists)
        d_hi = max(float(hg.densities.max()) for hg in hists) or 1.0
        sx = (width - pad - 10) / max(x_hi - x_lo, 1e-9)
        sy = (height - pad - 10) / d_hi
        colors = {"correct": "#2a9d8f", "incorrect": "#e63946"}
        for hg in hists:
            for i, d in enumerate(hg.densities):
                x = pad + (hg.bin_edges[i] - x_lo) * sx
                w = (hg.bin_edges[i + 1] - hg.bin_edges[i]) * sx
                body.append(f'<rect x="{x:.2f}" y="{height - pad - d * sy:.2f}" width="{w:.2f}" '
                            f'height="{d * sy:.2f}" fill="{colors.get(hg.group, "#888888")}" '
                            f'fill-opacity="0.6"/>')
    Path(path).write_text(_svg(width, height, body, "Density-normalized confidence"), encoding="utf-8")
