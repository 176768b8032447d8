"""Detection overlays: region polygons plus "text:confidence" labels drawn
with the embedded bitmap font."""

from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw

from .bezier import polygon_bbox, region_to_polygon
from .font import GLYPH_H, GLYPH_W, GLYPHS

_BLUE = (40, 90, 255)


def _stamp_label(pixels: np.ndarray, text: str, x0: int, y0: int, color) -> None:
    h, w = pixels.shape[:2]
    x = x0
    for ch in text:
        bitmap = GLYPHS.get(ch)
        if bitmap is None:
            x += GLYPH_W + 1
            continue
        for r in range(GLYPH_H):
            for c in range(GLYPH_W):
                if bitmap[r, c]:
                    py, px = y0 + r, x + c
                    if 0 <= py < h and 0 <= px < w:
                        pixels[py, px] = color
        x += GLYPH_W + 1


def render_detections(image: np.ndarray, detections, out_path) -> None:
    """Write an RGB PNG of a grayscale image with detections overdrawn."""
    canvas = Image.fromarray(image, mode="L").convert("RGB")
    draw = ImageDraw.Draw(canvas)
    for det in detections:
        poly = det.polygon if det.polygon is not None else region_to_polygon(det.region)
        pts = [(float(x), float(y)) for x, y in poly]
        draw.polygon(pts, outline=_BLUE)
    pixels = np.asarray(canvas).copy()
    for det in detections:
        poly = det.polygon if det.polygon is not None else region_to_polygon(det.region)
        bx0, by0, _, _ = polygon_bbox(poly)
        label = f"{det.text or ''}:{det.confidence:.2f}"
        _stamp_label(pixels, label, int(bx0), max(0, int(by0) - GLYPH_H - 2), _BLUE)
    Image.fromarray(pixels, mode="RGB").save(out_path, format="PNG")
