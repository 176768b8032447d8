"""Deterministic synthetic curved-text dataset: generator and loader.

Images are grayscale with uniform low-intensity noise; each text instance is
a lexicon word stamped glyph by glyph along a random bounded-curvature cubic
baseline, with the ground-truth region obtained by offsetting the baseline
upward by the glyph height.  Layout: images/<id>.png + annotations.jsonl.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import rng
from .bezier import BezierRegion, bezier_point, bezier_tangent, polygon_bbox, polygon_iou, region_to_polygon
from .errors import DataIOError, InputError, ValidationError
from .font import CHARSET, GLYPH_H, GLYPH_W, GLYPHS

MAX_WORD_LEN = 12
ADVANCE = GLYPH_W + 1  # cells per character, one blank column between glyphs
STROKE_WIDEN = 0.8  # fraction of a cell strokes bleed right/down, keeps ink dense
MAX_OVERLAP_IOU = 0.05
PLACEMENT_ATTEMPTS = 100
BORDER_MARGIN = 3.0


@dataclass(frozen=True)
class Lexicon:
    words: tuple[str, ...]

    def __post_init__(self):
        if not self.words:
            raise ValidationError("lexicon is empty")
        seen = set()
        for w in self.words:
            if not 1 <= len(w) <= MAX_WORD_LEN:
                raise ValidationError(f"lexicon word {w!r} has invalid length")
            if any(c not in CHARSET for c in w):
                raise ValidationError(f"lexicon word {w!r} outside charset [a-z0-9]")
            if w in seen:
                raise ValidationError(f"duplicate lexicon word {w!r}")
            seen.add(w)

    def __len__(self):
        return len(self.words)

    def __iter__(self):
        return iter(self.words)


def load_lexicon(path) -> Lexicon:
    p = Path(path)
    if not p.is_file():
        raise DataIOError(f"lexicon file not found: {p}")
    words = tuple(line.strip() for line in p.read_text(encoding="utf-8").splitlines() if line.strip())
    return Lexicon(words)


@dataclass(frozen=True)
class TextInstance:
    region: BezierRegion
    text: str


@dataclass
class SceneSample:
    id: str
    image: np.ndarray  # uint8 [h,w]
    instances: list[TextInstance]


@dataclass
class DatasetManifest:
    out_dir: Path
    image_ids: list[str] = field(default_factory=list)
    n_instances: int = 0
    skipped: int = 0


def _stamp_word(image: np.ndarray, word: str, baseline: np.ndarray, scale: float,
                intensity: int) -> None:
    """Rasterize glyphs along the baseline with local tangent rotation."""
    h, w = image.shape
    n = len(word)
    for i, ch in enumerate(word):
        t = (i + 0.5) / n
        base = bezier_point(baseline, t)
        tan = bezier_tangent(baseline, t)
        norm = np.hypot(tan[0], tan[1])
        if norm < 1e-9:
            tan = np.array([1.0, 0.0])
            norm = 1.0
        ux, uy = tan / norm  # unit tangent (reading direction)
        # upward normal in image coordinates (y grows downward)
        nx, ny = uy, -ux
        center = base + np.array([nx, ny]) * (GLYPH_H * scale / 2.0)
        bitmap = GLYPHS[ch]
        half_w = GLYPH_W * scale / 2.0
        half_h = GLYPH_H * scale / 2.0
        reach = np.hypot(half_w, half_h) + scale
        x0 = max(0, int(np.floor(center[0] - reach)))
        x1 = min(w - 1, int(np.ceil(center[0] + reach)))
        y0 = max(0, int(np.floor(center[1] - reach)))
        y1 = min(h - 1, int(np.ceil(center[1] + reach)))
        if x1 < x0 or y1 < y0:
            continue
        xs = np.arange(x0, x1 + 1) + 0.5
        ys = np.arange(y0, y1 + 1) + 0.5
        gx, gy = np.meshgrid(xs, ys)
        dx = gx - center[0]
        dy = gy - center[1]
        # inverse-rotate into glyph-local cell coordinates
        u = (dx * ux + dy * uy) / scale + GLYPH_W / 2.0
        v = (dx * nx + dy * ny) / scale  # along upward normal
        v = GLYPH_H / 2.0 - v  # glyph rows grow downward from the top
        on = np.zeros(gx.shape, dtype=bool)
        for du, dv in ((0.0, 0.0), (STROKE_WIDEN, 0.0), (0.0, STROKE_WIDEN),
                       (STROKE_WIDEN, STROKE_WIDEN)):
            cu = np.floor(u - du).astype(int)
            cv = np.floor(v - dv).astype(int)
            valid = (cu >= 0) & (cu < GLYPH_W) & (cv >= 0) & (cv < GLYPH_H)
            picked = np.zeros(gx.shape, dtype=bool)
            picked[valid] = bitmap[cv[valid], cu[valid]]
            on |= picked
        region_view = image[y0 : y1 + 1, x0 : x1 + 1]
        region_view[on] = intensity


def _sample_instance(stream: rng.Xoshiro256, lexicon: Lexicon, img_h: int, img_w: int):
    """Draw (word, baseline control points, region); may land out of bounds."""
    word = lexicon.words[stream.randint(len(lexicon))]
    scale = stream.uniform(2.6, 2.8)
    length = (ADVANCE * len(word) - 1) * scale
    glyph_h = GLYPH_H * scale
    angle = stream.uniform(-0.12, 0.12)
    ux, uy = np.cos(angle), np.sin(angle)
    x0 = stream.uniform(BORDER_MARGIN + glyph_h, img_w - BORDER_MARGIN - glyph_h)
    y0 = stream.uniform(BORDER_MARGIN + glyph_h, img_h - BORDER_MARGIN - glyph_h)
    p0 = np.array([x0, y0])
    p3 = p0 + np.array([ux, uy]) * length
    # bow the baseline: interior control points offset from the chord,
    # bounded to keep the text legible to the compact recognizer
    bow = 0.08 * length
    nvec = np.array([uy, -ux])
    p1 = p0 + (p3 - p0) / 3.0 + nvec * stream.uniform(-bow, bow)
    p2 = p0 + 2.0 * (p3 - p0) / 3.0 + nvec * stream.uniform(-bow, bow)
    baseline = np.stack([p0, p1, p2, p3])

    # region: bottom curve is the baseline, top curve offsets each control
    # point along the local upward normal by the glyph height
    top_pts = []
    for cp, t in zip(baseline, (0.0, 1 / 3, 2 / 3, 1.0)):
        tan = bezier_tangent(baseline, t)
        n = np.hypot(tan[0], tan[1])
        tan = tan / n if n > 1e-9 else np.array([1.0, 0.0])
        top_pts.append(cp + np.array([tan[1], -tan[0]]) * glyph_h)
    region = BezierRegion(top=np.stack(top_pts), bottom=baseline)
    return word, baseline, scale, region


def generate_dataset(out_dir, lexicon: Lexicon, n_images: int, image_size: tuple[int, int],
                     seed: int) -> DatasetManifest:
    """Write n_images synthetic samples; fully determined by the seed."""
    if n_images < 1:
        raise InputError("n_images must be at least 1")
    img_h, img_w = image_size
    if img_h < 64 or img_w < 64:
        raise InputError("image size must be at least 64x64")
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataIOError(f"cannot create {out}: {e}") from e

    manifest = DatasetManifest(out_dir=out)
    ann_lines = []
    for idx in range(n_images):
        stream = rng.substream(seed, idx)
        image_id = f"{seed & 0xFFFFFFFFFFFFFFFF:016x}-{idx:05d}"
        image = np.empty((img_h, img_w), dtype=np.uint8)
        noise = stream.uniform_array((img_h, img_w), 0.0, 61.0)
        image[:] = np.minimum(noise.astype(np.uint8), 60)

        n_instances = 1 + stream.randint(2)
        placed: list[tuple[TextInstance, np.ndarray]] = []
        skipped = 0
        for _ in range(n_instances):
            for _attempt in range(PLACEMENT_ATTEMPTS):
                word, baseline, scale, region = _sample_instance(stream, lexicon, img_h, img_w)
                poly = region_to_polygon(region)
                bx0, by0, bx1, by1 = polygon_bbox(poly)
                if bx0 < BORDER_MARGIN or by0 < BORDER_MARGIN:
                    continue
                if bx1 > img_w - 1 - BORDER_MARGIN or by1 > img_h - 1 - BORDER_MARGIN:
                    continue
                if any(polygon_iou(poly, other, raster_scale=2) > MAX_OVERLAP_IOU
                       for _, other in placed):
                    continue
                intensity = 215 + stream.randint(41)
                _stamp_word(image, word, baseline, scale, intensity)
                placed.append((TextInstance(region=region, text=word), poly))
                break
            else:
                skipped += 1
                print(f"warning: skipped unplaceable instance in {image_id}", file=sys.stderr)
        manifest.skipped += skipped

        try:
            Image.fromarray(image, mode="L").save(out / "images" / f"{image_id}.png", format="PNG")
        except OSError as e:
            raise DataIOError(f"cannot write image {image_id}: {e}") from e
        ann_lines.append(json.dumps({
            "id": image_id,
            "instances": [
                {"control_points": inst.region.to_flat(), "text": inst.text}
                for inst, _ in placed
            ],
        }))
        manifest.image_ids.append(image_id)
        manifest.n_instances += len(placed)

    try:
        (out / "annotations.jsonl").write_text("\n".join(ann_lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise DataIOError(f"cannot write annotations: {e}") from e
    return manifest


def load_dataset(dataset_dir) -> list[SceneSample]:
    """Read a generated dataset back; validates the stored invariants."""
    root = Path(dataset_dir)
    ann_path = root / "annotations.jsonl"
    if not ann_path.is_file():
        raise DataIOError(f"missing annotations file: {ann_path}")
    samples = []
    for line_no, line in enumerate(ann_path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise ValidationError(f"annotations.jsonl line {line_no}: {e}") from e
        image_id = record.get("id")
        img_path = root / "images" / f"{image_id}.png"
        if not img_path.is_file():
            raise DataIOError(f"missing image file: {img_path}")
        image = np.asarray(Image.open(img_path).convert("L"), dtype=np.uint8)
        h, w = image.shape
        instances = []
        for inst in record["instances"]:
            region = BezierRegion.from_flat(inst["control_points"])
            text = inst["text"]
            if any(c not in CHARSET for c in text):
                raise ValidationError(f"image {image_id}: transcription {text!r} outside charset")
            poly = region_to_polygon(region)
            bx0, by0, bx1, by1 = polygon_bbox(poly)
            if bx0 < 0 or by0 < 0 or bx1 > w - 1 or by1 > h - 1:
                raise ValidationError(f"image {image_id}: region out of bounds")
            instances.append(TextInstance(region=region, text=text))
        if not 1 <= len(instances) <= 4:
            raise ValidationError(f"image {image_id}: {len(instances)} instances (expected 1-4)")
        samples.append(SceneSample(id=image_id, image=image, instances=instances))
    return samples
