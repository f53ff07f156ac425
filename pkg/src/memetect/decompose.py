"""Candidate decomposition: text regions, layout class and the derived crops.

Turns one raw image into the views the identification walk operates on:
the text-free crop, visual segments, the whitespace-removed remainder,
superimposed-element proposals and the extracted caption text.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import cv2
import numpy as np

from . import ocr
from .errors import ContractViolationError, NothingLeftAfterCropError
from .imaging import RasterImage

BBox = tuple[int, int, int, int]

# Whitespace band: >= 10% of image height, >= 95% of (non-text) pixels at
# luminance >= 0.92. Gutters: near-uniform full-span runs (std < 8/255) of
# thickness >= 4 px separating contentful parts.
WHITE_LUMA = 0.92
WHITE_FRACTION = 0.95
BAND_MIN_HEIGHT_FRAC = 0.10
GUTTER_MAX_STD = 8.0 / 255.0
GUTTER_MIN_THICKNESS = 4
SEGMENT_MIN_AREA_FRAC = 0.05
CONTENT_MIN_STD = 5.0 / 255.0
TEXT_CONFIDENT = 0.5


@dataclass(frozen=True)
class TextRegion:
    bbox: BBox
    text: str
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence outside [0, 1]")
        if self.text == "" and self.confidence >= TEXT_CONFIDENT:
            raise ValueError("empty text requires confidence < 0.5")

    @property
    def area(self) -> int:
        x0, y0, x1, y1 = self.bbox
        return max(0, x1 - x0) * max(0, y1 - y0)


class LayoutKind(str, enum.Enum):
    SINGLE_CHARACTER_CAPTION = "single_character_caption"
    MULTI_SEGMENT = "multi_segment"
    IMAGE_PLUS_WHITESPACE = "image_plus_whitespace"
    OTHER = "other"


@dataclass(frozen=True)
class PanelLayout:
    kind: LayoutKind
    evidence: tuple[BBox, ...] = ()

    def __post_init__(self) -> None:
        if self.kind == LayoutKind.IMAGE_PLUS_WHITESPACE and not self.evidence:
            raise ValueError("ImagePlusWhitespace requires a detected band")
        if self.kind == LayoutKind.MULTI_SEGMENT and len(self.evidence) < 2:
            raise ValueError("MultiSegment requires >= 2 segments")


class ViewKind(str, enum.Enum):
    FULL_IMAGE = "full_image"
    TEXT_REMOVED = "text_removed"
    SEGMENT = "segment"
    WHITESPACE_REMOVED = "whitespace_removed"
    SUPERIMPOSED_ELEMENT = "superimposed_element"
    EXTRACTED_TEXT = "extracted_text"


@dataclass(frozen=True)
class DerivedView:
    kind: ViewKind
    image: RasterImage | None = None
    text: str | None = None
    source_boxes: tuple[BBox, ...] = ()
    index: int = 0

    def __post_init__(self) -> None:
        if self.kind == ViewKind.EXTRACTED_TEXT:
            if self.text is None:
                raise ValueError("extracted-text view requires a text payload")
        elif self.image is None:
            raise ValueError(f"{self.kind.value} view requires an image payload")


def detect_text_regions(
    image: RasterImage, backend: ocr.TextExtractionBackend | str = "glyph"
) -> list[TextRegion]:
    """Detected text regions, top-to-bottom / left-to-right, IoU-disjoint."""
    if isinstance(backend, str):
        backend = ocr.get_backend(backend)
    detections = backend.extract(image.to_png_bytes())
    regions = []
    for det in detections:
        x0, y0, x1, y1 = det.bbox
        bbox = (max(0, x0), max(0, y0), min(image.width, x1), min(image.height, y1))
        conf = min(1.0, max(0.0, det.confidence))
        if det.text == "" and conf >= TEXT_CONFIDENT:
            conf = TEXT_CONFIDENT - 0.01
        regions.append(TextRegion(bbox, det.text, conf))
    regions.sort(key=lambda r: (r.bbox[1], r.bbox[0]))
    return regions


def confident_regions(regions: list[TextRegion]) -> list[TextRegion]:
    return [r for r in regions if r.confidence >= TEXT_CONFIDENT]


def _text_mask(image: RasterImage, regions: list[TextRegion], pad: int = 3) -> np.ndarray:
    """Boolean mask over text bboxes, padded to cover anti-aliasing halos."""
    mask = np.zeros((image.height, image.width), dtype=bool)
    for r in regions:
        x0, y0, x1, y1 = r.bbox
        mask[max(0, y0 - pad) : y1 + pad, max(0, x0 - pad) : x1 + pad] = True
    return mask


def _edge_whitespace_bands(image: RasterImage, regions: list[TextRegion]) -> list[BBox]:
    """Top/bottom whitespace bands; text-region pixels do not count against
    the whiteness requirement (captions live inside the band)."""
    gray = image.gray()
    text = _text_mask(image, regions)
    white = gray >= WHITE_LUMA
    free = ~text
    free_count = free.sum(axis=1)
    white_count = (white & free).sum(axis=1)
    qualifies = np.where(free_count == 0, True, white_count >= WHITE_FRACTION * np.maximum(free_count, 1))
    min_h = max(1, int(BAND_MIN_HEIGHT_FRAC * image.height))
    bands = []
    top = 0
    while top < image.height and qualifies[top]:
        top += 1
    if top >= min_h:
        bands.append((0, 0, image.width, top))
    bottom = image.height
    while bottom > top and qualifies[bottom - 1]:
        bottom -= 1
    if image.height - bottom >= min_h and bottom > top:
        bands.append((0, bottom, image.width, image.height))
    return bands


def _is_contentful(gray: np.ndarray, text: np.ndarray, box: BBox) -> bool:
    x0, y0, x1, y1 = box
    sub = gray[y0:y1, x0:x1]
    free = ~text[y0:y1, x0:x1]
    if free.sum() < 0.1 * max(1, sub.size):
        return False
    return float(sub[free].std()) >= CONTENT_MIN_STD


def _uniform_runs(profile_std: np.ndarray, lo: int, hi: int) -> list[tuple[int, int]]:
    """Interior runs of near-uniform lines inside [lo, hi)."""
    runs = []
    i = lo
    while i < hi:
        if profile_std[i] < GUTTER_MAX_STD:
            j = i
            while j < hi and profile_std[j] < GUTTER_MAX_STD:
                j += 1
            if i > lo and j < hi and (j - i) >= GUTTER_MIN_THICKNESS:
                runs.append((i, j))
            i = j
        else:
            i += 1
    return runs


def _split_axis(
    gray: np.ndarray, text: np.ndarray, box: BBox, axis: int
) -> list[BBox]:
    """Split a box by uniform gutters along one axis; keep contentful parts."""
    x0, y0, x1, y1 = box
    sub = gray[y0:y1, x0:x1]
    if axis == 0:
        profile_std = sub.std(axis=1)
        lo, hi = 0, y1 - y0
    else:
        profile_std = sub.std(axis=0)
        lo, hi = 0, x1 - x0
    cuts = _uniform_runs(profile_std, lo, hi)
    if not cuts:
        return [box]
    parts = []
    start = lo
    for a, b in cuts:
        if a > start:
            parts.append((start, a))
        start = b
    if hi > start:
        parts.append((start, hi))
    boxes = []
    for a, b in parts:
        if axis == 0:
            boxes.append((x0, y0 + a, x1, y0 + b))
        else:
            boxes.append((x0 + a, y0, x0 + b, y1))
    kept = [b for b in boxes if _is_contentful(gray, text, b)]
    if len(kept) < 2:
        return [box]
    return kept


def _segment_boxes(image: RasterImage, regions: list[TextRegion], core: BBox) -> list[BBox]:
    """Row-major grid cells found by gutter splitting rows, then columns."""
    gray = image.gray()
    text = _text_mask(image, regions)
    min_area = SEGMENT_MIN_AREA_FRAC * image.area
    rows = _split_axis(gray, text, core, axis=0)
    cells: list[BBox] = []
    for row in rows:
        cols = _split_axis(gray, text, row, axis=1)
        cells.extend(cols)
    if len(cells) < 2:
        return []
    cells = [c for c in cells if (c[2] - c[0]) * (c[3] - c[1]) >= min_area]
    if len(cells) < 2:
        return []
    cells.sort(key=lambda c: (c[1], c[0]))
    return cells


def classify_layout(image: RasterImage, regions: list[TextRegion]) -> PanelLayout:
    """Exactly one layout class; evidence boxes for segments/whitespace."""
    bands = _edge_whitespace_bands(image, regions)
    core = (0, 0, image.width, image.height)
    if bands:
        top = bands[0][3] if bands[0][1] == 0 else 0
        bottom = bands[-1][1] if bands[-1][3] == image.height else image.height
        if bottom > top:
            core = (0, top, image.width, bottom)
    segments = _segment_boxes(image, regions, core)
    if len(segments) >= 2:
        return PanelLayout(LayoutKind.MULTI_SEGMENT, tuple(segments))
    if bands:
        return PanelLayout(LayoutKind.IMAGE_PLUS_WHITESPACE, tuple(bands))
    gray = image.gray()
    text = _text_mask(image, regions)
    overlaying = [
        r
        for r in confident_regions(regions)
        if r.bbox[1] < core[3] and r.bbox[3] > core[1]
    ]
    if overlaying and _is_contentful(gray, text, core):
        return PanelLayout(LayoutKind.SINGLE_CHARACTER_CAPTION)
    return PanelLayout(LayoutKind.OTHER)


def _expand_to_band(image: RasterImage, bbox: BBox) -> BBox:
    """Grow a text bbox over its surrounding solid caption band, if any.

    Growth per side is capped at the text height so uniform photo areas are
    not swallowed.
    """
    gray = image.gray()
    x0, y0, x1, y1 = bbox
    cap = 2 * max(8, y1 - y0)
    ring = []
    if y0 > 0:
        ring.append(gray[y0 - 1, x0:x1])
    if y1 < image.height:
        ring.append(gray[y1, x0:x1])
    if x0 > 0:
        ring.append(gray[y0:y1, x0 - 1])
    if x1 < image.width:
        ring.append(gray[y0:y1, x1])
    if not ring:
        return bbox
    bg = float(np.median(np.concatenate(ring)))

    def strip_ok(strip: np.ndarray) -> bool:
        return strip.size > 0 and float(strip.std()) < GUTTER_MAX_STD and abs(float(strip.mean()) - bg) < 0.05

    grown = [x0, y0, x1, y1]
    for _ in range(cap):
        if grown[1] > 0 and strip_ok(gray[grown[1] - 1, grown[0] : grown[2]]) and y0 - (grown[1] - 1) <= cap:
            grown[1] -= 1
        else:
            break
    for _ in range(cap):
        if grown[3] < image.height and strip_ok(gray[grown[3], grown[0] : grown[2]]) and (grown[3] + 1) - y1 <= cap:
            grown[3] += 1
        else:
            break
    for _ in range(cap):
        if grown[0] > 0 and strip_ok(gray[grown[1] : grown[3], grown[0] - 1]) and x0 - (grown[0] - 1) <= cap:
            grown[0] -= 1
        else:
            break
    for _ in range(cap):
        if grown[2] < image.width and strip_ok(gray[grown[1] : grown[3], grown[2]]) and (grown[2] + 1) - x1 <= cap:
            grown[2] += 1
        else:
            break
    return (grown[0], grown[1], grown[2], grown[3])


def _largest_free_rectangle(width: int, height: int, blocked: list[BBox]) -> BBox | None:
    """Largest axis-aligned rectangle avoiding all blocked boxes (exact, via
    coordinate compression over box edges)."""
    xs = sorted({0, width, *(b[0] for b in blocked), *(b[2] for b in blocked)})
    ys = sorted({0, height, *(b[1] for b in blocked), *(b[3] for b in blocked)})
    xs = [x for x in xs if 0 <= x <= width]
    ys = [y for y in ys if 0 <= y <= height]
    nx, ny = len(xs) - 1, len(ys) - 1
    if nx <= 0 or ny <= 0:
        return None
    free = np.ones((ny, nx), dtype=bool)
    for bx0, by0, bx1, by1 in blocked:
        for j in range(ny):
            if ys[j] >= by1 or ys[j + 1] <= by0:
                continue
            for i in range(nx):
                if xs[i] >= bx1 or xs[i + 1] <= bx0:
                    continue
                free[j, i] = False
    best = None
    best_area = 0
    for j0 in range(ny):
        alive = np.ones(nx, dtype=bool)
        for j1 in range(j0, ny):
            alive &= free[j1]
            if not alive.any():
                break
            i = 0
            while i < nx:
                if alive[i]:
                    k = i
                    while k < nx and alive[k]:
                        k += 1
                    area = (xs[k] - xs[i]) * (ys[j1 + 1] - ys[j0])
                    if area > best_area:
                        best_area = area
                        best = (xs[i], ys[j0], xs[k], ys[j1 + 1])
                    i = k
                else:
                    i += 1
    return best


def crop_remove_text(image: RasterImage, regions: list[TextRegion]) -> DerivedView:
    """Largest text-free crop; identity when there is nothing to remove."""
    if not regions:
        return DerivedView(ViewKind.TEXT_REMOVED, image=image, source_boxes=((0, 0, image.width, image.height),))
    mask = _text_mask(image, regions)
    if mask.mean() >= 0.9:
        raise NothingLeftAfterCropError("text regions cover >= 90% of the image")
    blocked = [_expand_to_band(image, r.bbox) for r in regions]
    rect = _largest_free_rectangle(image.width, image.height, blocked)
    if rect is None or (rect[2] - rect[0]) * (rect[3] - rect[1]) < 0.02 * image.area:
        raise NothingLeftAfterCropError("no usable text-free rectangle remains")
    return DerivedView(ViewKind.TEXT_REMOVED, image=image.crop(rect), source_boxes=(rect,))


def split_segments(
    image: RasterImage,
    regions: list[TextRegion] | None = None,
    layout: PanelLayout | None = None,
) -> list[DerivedView]:
    """Segment crops for a MultiSegment candidate, row-major."""
    regions = regions or []
    if layout is None:
        layout = classify_layout(image, regions)
    if layout.kind != LayoutKind.MULTI_SEGMENT:
        raise ContractViolationError("split_segments requires a MultiSegment layout")
    views = []
    for i, box in enumerate(layout.evidence):
        views.append(
            DerivedView(ViewKind.SEGMENT, image=image.crop(box), source_boxes=(box,), index=i)
        )
    return views


def crop_remove_whitespace(
    image: RasterImage,
    regions: list[TextRegion] | None = None,
    layout: PanelLayout | None = None,
) -> DerivedView:
    """The non-whitespace remainder of an ImagePlusWhitespace candidate."""
    regions = regions or []
    if layout is None:
        layout = classify_layout(image, regions)
    if layout.kind != LayoutKind.IMAGE_PLUS_WHITESPACE:
        raise ContractViolationError("crop_remove_whitespace requires a whitespace band")
    top = 0
    bottom = image.height
    for band in layout.evidence:
        if band[1] == 0:
            top = max(top, band[3])
        if band[3] == image.height:
            bottom = min(bottom, band[1])
    if bottom <= top:
        raise ContractViolationError("whitespace bands cover the whole image")
    box = (0, top, image.width, bottom)
    return DerivedView(ViewKind.WHITESPACE_REMOVED, image=image.crop(box), source_boxes=(box,))


def extract_superimposed_elements(
    image: RasterImage, exclude: list[BBox] | None = None, limit: int = 8
) -> list[DerivedView]:
    """Candidate crops of pasted-looking elements, ranked by boundary contrast."""
    gray = image.gray()
    gx = np.abs(np.diff(gray, axis=1, prepend=gray[:, :1]))
    gy = np.abs(np.diff(gray, axis=0, prepend=gray[:1, :]))
    grad = gx + gy
    strong = (grad > 0.45).astype(np.uint8)
    kernel = np.ones((5, 5), np.uint8)
    joined = cv2.dilate(cv2.morphologyEx(strong, cv2.MORPH_CLOSE, kernel), np.ones((3, 3), np.uint8))
    n, _, stats, _ = cv2.connectedComponentsWithStats(joined, connectivity=8)
    proposals: list[tuple[float, BBox]] = []
    for i in range(1, n):
        x, y, w, h, _ = stats[i]
        box = (int(x), int(y), int(x + w), int(y + h))
        area = w * h
        if w < 12 or h < 12:
            continue
        if area < 0.004 * image.area or area > 0.6 * image.area:
            continue
        if exclude and any(box_overlap_frac(box, e) >= 0.5 for e in exclude):
            continue
        salience = _perimeter_contrast(grad, box)
        if salience < 0.2:
            continue
        proposals.append((salience, box))
    proposals.sort(key=lambda p: (-p[0], p[1]))
    picked: list[tuple[float, BBox]] = []
    for salience, box in proposals:
        if any(ocr.box_iou(box, other) > 0.5 for _, other in picked):
            continue
        picked.append((salience, box))
        if len(picked) >= limit:
            break
    return [
        DerivedView(ViewKind.SUPERIMPOSED_ELEMENT, image=image.crop(box), source_boxes=(box,), index=i)
        for i, (_, box) in enumerate(picked)
    ]


def box_overlap_frac(box: BBox, other: BBox) -> float:
    """Fraction of `box` covered by `other`."""
    ix0, iy0 = max(box[0], other[0]), max(box[1], other[1])
    ix1, iy1 = min(box[2], other[2]), min(box[3], other[3])
    if ix1 <= ix0 or iy1 <= iy0:
        return 0.0
    area = (box[2] - box[0]) * (box[3] - box[1])
    return (ix1 - ix0) * (iy1 - iy0) / max(1, area)


def _perimeter_contrast(grad: np.ndarray, box: BBox) -> float:
    x0, y0, x1, y1 = box
    strips = [grad[y0 : y0 + 2, x0:x1], grad[max(0, y1 - 2) : y1, x0:x1],
              grad[y0:y1, x0 : x0 + 2], grad[y0:y1, max(0, x1 - 2) : x1]]
    values = np.concatenate([s.ravel() for s in strips if s.size])
    if values.size == 0:
        return 0.0
    return float(np.minimum(values, 1.0).mean()) * 4.0


def extract_text(image: RasterImage, regions: list[TextRegion]) -> DerivedView:
    """Region texts joined in reading order, whitespace-normalised, lowercased."""
    ordered = sorted(regions, key=lambda r: (r.bbox[1], r.bbox[0]))
    joined = " ".join(r.text for r in ordered if r.text)
    normalized = " ".join(joined.lower().split())
    return DerivedView(ViewKind.EXTRACTED_TEXT, text=normalized)


@dataclass
class CandidateMeme:
    """A candidate image plus the derived views the walk needs, cached."""

    image: RasterImage
    regions: list[TextRegion] = field(default_factory=list)
    _layout: PanelLayout | None = None

    @staticmethod
    def prepare(image: RasterImage, backend: ocr.TextExtractionBackend | str = "glyph") -> "CandidateMeme":
        return CandidateMeme(image=image, regions=detect_text_regions(image, backend))

    @property
    def candidate_id(self) -> str:
        return self.image.content_digest

    @property
    def layout(self) -> PanelLayout:
        if self._layout is None:
            self._layout = classify_layout(self.image, self.regions)
        return self._layout

    @property
    def confident_regions(self) -> list[TextRegion]:
        return confident_regions(self.regions)

    @property
    def text(self) -> str:
        return extract_text(self.image, self.confident_regions).text or ""

    def text_area_fraction(self) -> float:
        """Fraction of the image claimed by text, measured over band-expanded
        boxes so a text-only page (glyphs on a blank canvas) approaches 1.0."""
        if not self.confident_regions:
            return 0.0
        expanded = [
            TextRegion(_expand_to_band(self.image, r.bbox), r.text, r.confidence)
            for r in self.confident_regions
        ]
        mask = _text_mask(self.image, expanded)
        return float(mask.mean())
