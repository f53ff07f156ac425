"""Text-extraction adapters.

The adapter contract is (image bytes) -> list of (bbox, text, confidence).
The built-in "glyph" backend detects high-contrast text lines and recognises
characters by template-matching against rendered DejaVu glyphs, so it needs no
external OCR binary and behaves deterministically on rendered captions. Other
backends can be registered; asking for one that is not installed raises
BackendMissingError rather than returning an empty success.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Protocol

import cv2
import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .errors import BackendMissingError
from .imaging import RasterImage

BBox = tuple[int, int, int, int]  # x0, y0, x1, y1 (exclusive right/bottom)


@dataclass(frozen=True)
class RawTextDetection:
    bbox: BBox
    text: str
    confidence: float


class TextExtractionBackend(Protocol):
    name: str

    def extract(self, data: bytes) -> list[RawTextDetection]: ...


_ALPHABET = (
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    "abcdefghijklmnopqrstuvwxyz"
    "0123456789"
    "!?.,'-:"
)
_GLYPH_SIZE = 24
_BAR_GLYPHS = {"I", "l"}


def _font_paths() -> list[str]:
    import matplotlib.font_manager as fm

    paths = []
    for weight in ("bold", "normal"):
        prop = fm.FontProperties(family="DejaVu Sans", weight=weight)
        paths.append(fm.findfont(prop))
    return sorted(set(paths))


def _normalize_mask(mask: np.ndarray) -> np.ndarray:
    """Tight-crop a boolean glyph mask, pad square, resize to the template size."""
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return np.zeros((_GLYPH_SIZE, _GLYPH_SIZE), dtype=bool)
    tight = mask[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]
    h, w = tight.shape
    side = max(h, w)
    canvas = np.zeros((side, side), dtype=np.uint8)
    oy, ox = (side - h) // 2, (side - w) // 2
    canvas[oy : oy + h, ox : ox + w] = tight.astype(np.uint8)
    interp = cv2.INTER_AREA if side >= _GLYPH_SIZE else cv2.INTER_LINEAR
    resized = cv2.resize(canvas * 255, (_GLYPH_SIZE, _GLYPH_SIZE), interpolation=interp)
    return resized >= 96


def _dice(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.count_nonzero(a & b)
    total = np.count_nonzero(a) + np.count_nonzero(b)
    if total == 0:
        return 0.0
    return 2.0 * inter / total


class _GlyphTemplates:
    """Clean and degraded-size glyph renderings with cap-relative heights."""

    def __init__(self) -> None:
        self.templates: list[tuple[str, np.ndarray, float]] = []
        for path in _font_paths():
            self._add_variant(path, size=64, degrade=False)
            # degraded variants: tiny rendering pushed through the same
            # upscale used on small captions (dots fuse with stems there)
            self._add_variant(path, size=13, degrade=True)

    def _render(self, font: ImageFont.FreeTypeFont, ch: str, degrade: bool) -> np.ndarray:
        pad = 24 if not degrade else 10
        side = 128 if not degrade else 40
        img = Image.new("L", (side, side), 0)
        ImageDraw.Draw(img).text((pad, pad), ch, font=font, fill=255)
        arr = np.asarray(img, dtype=np.float64) / 255.0
        if degrade:
            arr = cv2.resize(arr, (side * 3, side * 3), interpolation=cv2.INTER_CUBIC)
        return arr >= 0.5

    def _add_variant(self, path: str, size: int, degrade: bool) -> None:
        font = ImageFont.truetype(path, size)
        cap = self._render(font, "A", degrade)
        ys = np.nonzero(cap.any(axis=1))[0]
        cap_h = float(ys.max() - ys.min() + 1) if len(ys) else 1.0
        for ch in _ALPHABET:
            mask = self._render(font, ch, degrade)
            if not mask.any():
                continue
            ys = np.nonzero(mask.any(axis=1))[0]
            ratio = (ys.max() - ys.min() + 1) / cap_h
            self.templates.append((ch, _normalize_mask(mask), float(ratio)))

    def classify(self, mask: np.ndarray, height_ratio: float | None = None) -> tuple[str, float, float]:
        """Best (char, score, template_cap_ratio) for a glyph mask."""
        norm = _normalize_mask(mask)
        best_ch, best_score, best_ratio = "", 0.0, 1.0
        for ch, tpl, tpl_ratio in self.templates:
            score = _dice(norm, tpl)
            if height_ratio is not None:
                score -= 1.2 * max(0.0, abs(tpl_ratio - height_ratio) - 0.12)
            if score > best_score:
                best_ch, best_score, best_ratio = ch, score, tpl_ratio
        return best_ch, best_score, best_ratio


_templates: _GlyphTemplates | None = None


def _get_templates() -> _GlyphTemplates:
    global _templates
    if _templates is None:
        _templates = _GlyphTemplates()
    return _templates


def _gradient_mask(gray: np.ndarray) -> np.ndarray:
    gx = np.abs(np.diff(gray, axis=1, prepend=gray[:, :1]))
    gy = np.abs(np.diff(gray, axis=0, prepend=gray[:1, :]))
    return np.maximum(gx, gy) > 0.26


def _detect_line_boxes(gray: np.ndarray) -> list[BBox]:
    h, w = gray.shape
    mask = _gradient_mask(gray).astype(np.uint8)
    kernel = cv2.getStructuringElement(cv2.MORPH_RECT, (max(9, h // 40), 3))
    joined = cv2.morphologyEx(mask, cv2.MORPH_CLOSE, kernel)
    n, _, stats, _ = cv2.connectedComponentsWithStats(joined, connectivity=8)
    boxes: list[BBox] = []
    for i in range(1, n):
        x, y, bw, bh, area = stats[i]
        if bh < 6 or bh > 0.55 * h or bw < 4 or area < 24:
            continue
        boxes.append((int(x), int(y), int(x + bw), int(y + bh)))
    return _merge_line_boxes(boxes)


def _vertical_overlap(a: BBox, b: BBox) -> float:
    top = max(a[1], b[1])
    bottom = min(a[3], b[3])
    if bottom <= top:
        return 0.0
    return (bottom - top) / max(1, min(a[3] - a[1], b[3] - b[1]))


def box_iou(a: BBox, b: BBox) -> float:
    ix0, iy0 = max(a[0], b[0]), max(a[1], b[1])
    ix1, iy1 = min(a[2], b[2]), min(a[3], b[3])
    if ix1 <= ix0 or iy1 <= iy0:
        return 0.0
    inter = (ix1 - ix0) * (iy1 - iy0)
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def _merge_line_boxes(boxes: list[BBox]) -> list[BBox]:
    """Union boxes that sit on the same text line or overlap materially."""
    boxes = list(boxes)
    changed = True
    while changed:
        changed = False
        out: list[BBox] = []
        for box in sorted(boxes, key=lambda b: (b[1], b[0])):
            merged = False
            for i, other in enumerate(out):
                same_line = (
                    _vertical_overlap(box, other) >= 0.5
                    and _h_gap(box, other)
                    <= 1.3 * max(box[3] - box[1], other[3] - other[1])
                )
                if same_line or box_iou(box, other) >= 0.2:
                    out[i] = (
                        min(box[0], other[0]),
                        min(box[1], other[1]),
                        max(box[2], other[2]),
                        max(box[3], other[3]),
                    )
                    merged = True
                    changed = True
                    break
            if not merged:
                out.append(box)
        boxes = out
    return sorted(boxes, key=lambda b: (b[1], b[0]))


def _h_gap(a: BBox, b: BBox) -> float:
    if a[2] >= b[0] and b[2] >= a[0]:
        return 0.0
    return float(max(a[0] - b[2], b[0] - a[2]))


def _binarize_region(crop: np.ndarray) -> np.ndarray:
    """Ink mask for a region crop: the side of Otsu opposite the border colour."""
    u8 = np.clip(crop * 255.0 + 0.5, 0, 255).astype(np.uint8)
    thresh, _ = cv2.threshold(u8, 0, 255, cv2.THRESH_BINARY + cv2.THRESH_OTSU)
    border = np.concatenate([u8[0, :], u8[-1, :], u8[:, 0], u8[:, -1]]).astype(np.float64)
    background_bright = float(np.median(border)) > thresh
    return (u8 <= thresh) if background_bright else (u8 > thresh)


def _split_chars(ink: np.ndarray) -> list[list[tuple[np.ndarray, BBox]]]:
    """Per-character (mask, bbox) pairs grouped into text lines, reading order."""
    n, labels, stats, _ = cv2.connectedComponentsWithStats(ink.astype(np.uint8), connectivity=8)
    comps = []
    for i in range(1, n):
        x, y, w, h, area = stats[i]
        if area < 4:
            continue
        comps.append([int(x), int(y), int(x + w), int(y + h), {i}])
    # merge components that overlap horizontally (i/j dots, colons)
    comps.sort(key=lambda c: c[0])
    merged: list[list] = []
    for comp in comps:
        hit = None
        for existing in merged:
            ox = min(comp[2], existing[2]) - max(comp[0], existing[0])
            if ox > 0.4 * min(comp[2] - comp[0], existing[2] - existing[0]):
                hit = existing
                break
        if hit is None:
            merged.append(comp)
        else:
            hit[0] = min(hit[0], comp[0])
            hit[1] = min(hit[1], comp[1])
            hit[2] = max(hit[2], comp[2])
            hit[3] = max(hit[3], comp[3])
            hit[4] |= comp[4]
    # group into lines by vertical overlap, then order left-to-right
    lines: list[list[list]] = []
    for comp in sorted(merged, key=lambda c: c[1]):
        placed = False
        for line in lines:
            ref = line[0]
            top, bottom = max(comp[1], ref[1]), min(comp[3], ref[3])
            if bottom - top > 0.4 * min(comp[3] - comp[1], ref[3] - ref[1]):
                line.append(comp)
                placed = True
                break
        if not placed:
            lines.append([comp])
    out: list[list[tuple[np.ndarray, BBox]]] = []
    for line in lines:
        line.sort(key=lambda c: c[0])
        row = []
        for x0, y0, x1, y1, label_ids in line:
            sub = np.isin(labels[y0:y1, x0:x1], list(label_ids))
            row.append((sub, (x0, y0, x1, y1)))
        out.append(row)
    return out


class GlyphMatcherBackend:
    """Template-matching recogniser for rendered captions."""

    name = "glyph"

    def __init__(self) -> None:
        self._cache: dict[str, list[RawTextDetection]] = {}

    def extract(self, data: bytes) -> list[RawTextDetection]:
        key = hashlib.sha256(data).hexdigest()
        if key in self._cache:
            return self._cache[key]
        image = RasterImage.from_bytes(data)
        gray = image.gray()
        detections = []
        for box in _detect_line_boxes(gray):
            text, conf = self._recognize(gray, box)
            if text == "" and conf < 0.25:
                continue
            detections.append(RawTextDetection(box, text, conf))
        detections.sort(key=lambda d: (d.bbox[1], d.bbox[0]))
        if len(self._cache) > 512:
            self._cache.clear()
        self._cache[key] = detections
        return detections

    def _recognize(self, gray: np.ndarray, box: BBox) -> tuple[str, float]:
        x0, y0, x1, y1 = box
        pad = 2
        crop = gray[max(0, y0 - pad) : y1 + pad, max(0, x0 - pad) : x1 + pad]
        if crop.size == 0:
            return "", 0.0
        if crop.shape[0] < 48:
            # small glyphs lose dots and split strokes; recognise at ~64px
            scale = 64.0 / crop.shape[0]
            crop = cv2.resize(
                crop, (max(1, int(crop.shape[1] * scale)), 64), interpolation=cv2.INTER_CUBIC
            )
        ink = _binarize_region(crop)
        if not ink.any():
            return "", 0.0
        lines = _split_chars(ink)
        templates = _get_templates()
        line_texts: list[str] = []
        scores: list[float] = []
        for line in lines:
            heights = [geo[3] - geo[1] for _, geo in line]
            median_h = float(np.median(heights))
            # pass 1: rough labels to estimate the line's cap-height scale
            cap_scale = None
            if len(line) > 1:
                votes = []
                for (mask, geo), h in zip(line, heights):
                    _, score, tpl_ratio = templates.classify(mask)
                    if score >= 0.35 and tpl_ratio > 0:
                        votes.append(h / tpl_ratio)
                if votes:
                    cap_scale = float(np.median(votes))
            pieces: list[str] = []
            prev: BBox | None = None
            for mask, geo in line:
                ratio = (geo[3] - geo[1]) / cap_scale if cap_scale else None
                ch, score, _ = templates.classify(mask, ratio)
                if score < 0.35:
                    prev = geo
                    continue
                if prev is not None and geo[0] - prev[2] > 0.42 * median_h:
                    pieces.append(" ")
                pieces.append(ch)
                scores.append(score)
                prev = geo
            if pieces:
                line_texts.append("".join(pieces))
        text = " ".join(line_texts).strip()
        text = _resolve_bar_glyphs(text)
        confidence = float(np.mean(scores)) if scores else 0.0
        confidence = self._plausibility_cap(text, len(scores), confidence, crop, ink)
        if not text:
            confidence = min(confidence, 0.49)
        return text, round(confidence, 4)

    @staticmethod
    def _plausibility_cap(
        text: str, n_chars: int, confidence: float, crop: np.ndarray, ink: np.ndarray
    ) -> float:
        """Photo blobs can resemble single glyphs; cap their confidence below
        the 0.5 line so they never count as textual content.
        """
        if not any(c.isalnum() for c in text):
            return min(confidence, 0.45)
        if n_chars >= 3:
            return confidence
        if confidence < 0.7:
            return min(confidence, 0.45)
        background = crop[~cv2.dilate(ink.astype(np.uint8), np.ones((3, 3), np.uint8)).astype(bool)]
        if background.size == 0 or float(background.std()) > 0.07:
            return min(confidence, 0.45)
        return confidence


def _resolve_bar_glyphs(text: str) -> str:
    """Disambiguate I/l bars by the case of the surrounding letters."""
    letters = [c for c in text if c.isalpha() and c not in _BAR_GLYPHS]
    if not letters:
        return text
    upper = sum(1 for c in letters if c.isupper())
    mostly_upper = upper >= len(letters) / 2
    out = []
    for c in text:
        if c in _BAR_GLYPHS:
            out.append("I" if mostly_upper else "l")
        else:
            out.append(c)
    return "".join(out)


_REGISTRY: dict[str, Callable[[], TextExtractionBackend]] = {
    "glyph": GlyphMatcherBackend,
}
_instances: dict[str, TextExtractionBackend] = {}


def register_backend(name: str, factory: Callable[[], TextExtractionBackend]) -> None:
    _REGISTRY[name] = factory
    _instances.pop(name, None)


def get_backend(name: str) -> TextExtractionBackend:
    if name not in _REGISTRY:
        raise BackendMissingError(
            f"text-extraction backend {name!r} is not available; "
            f"known backends: {sorted(_REGISTRY)}"
        )
    if name not in _instances:
        _instances[name] = _REGISTRY[name]()
    return _instances[name]
