"""Local keypoint features and geometric verification of shared elements.

Matching counts mutually-nearest ORB descriptor pairs and verifies them with
a similarity transform estimated by random-sample consensus (2-point
hypotheses, 3 px reprojection tolerance). Sampling uses the package's
portable generator seeded from both content digests, and pairs are evaluated
in canonical digest order, so reports are deterministic and exactly
symmetric.
"""
from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .errors import InsufficientFeaturesError
from .imaging import RasterImage
from .rng import Splitmix64, seed_from_text

MIN_SIDE = 32
DEFAULT_FEATURES = 512
RANSAC_ITERS = 512
REPROJECTION_TOL = 3.0
_SCALE_RANGE = (0.2, 5.0)

BBox = tuple[int, int, int, int]


@dataclass(frozen=True)
class FeatureSet:
    digest: str
    width: int
    height: int
    keypoints: np.ndarray  # (N, 2) float32
    descriptors: np.ndarray  # (N, 32) uint8

    def __len__(self) -> int:
        return len(self.keypoints)


@dataclass(frozen=True)
class MatchReport:
    count: int  # geometrically consistent matches
    raw_matches: int
    bbox_a: BBox | None
    bbox_b: BBox | None
    coverage_a: float
    coverage_b: float
    # similarity transform a->b as complex (m, t): z_b = m*z_a + t,
    # flattened to (m.real, m.imag, t.real, t.imag); None when no consensus
    transform: tuple[float, float, float, float] | None = None

    def inverse_transform(self) -> tuple[float, float, float, float] | None:
        if self.transform is None:
            return None
        m = complex(self.transform[0], self.transform[1])
        t = complex(self.transform[2], self.transform[3])
        if abs(m) < 1e-9:
            return None
        inv_m = 1.0 / m
        inv_t = -t / m
        return (inv_m.real, inv_m.imag, inv_t.real, inv_t.imag)


_EMPTY = {
    "keypoints": np.zeros((0, 2), dtype=np.float32),
    "descriptors": np.zeros((0, 32), dtype=np.uint8),
}


def extract_features(
    image: RasterImage,
    n_features: int = DEFAULT_FEATURES,
    exclude_boxes: list[BBox] | None = None,
    exclude_text: bool = True,
) -> FeatureSet:
    """Keypoints + binary descriptors, with rendered-text regions excluded.

    Same-font captions on unrelated images produce geometrically consistent
    glyph matches; relatedness of textual elements is judged separately, so
    visual features must not include them.
    """
    if image.width < MIN_SIDE or image.height < MIN_SIDE:
        raise InsufficientFeaturesError(
            f"image {image.width}x{image.height} below {MIN_SIDE}x{MIN_SIDE}"
        )
    orb = cv2.ORB_create(nfeatures=n_features, fastThreshold=10)
    keypoints, descriptors = orb.detectAndCompute(image.gray_u8(), None)
    if descriptors is None or len(keypoints) == 0:
        return FeatureSet(image.content_digest, image.width, image.height, **_EMPTY)
    pts = np.array([kp.pt for kp in keypoints], dtype=np.float32)
    descriptors = descriptors.astype(np.uint8)
    if exclude_boxes is None and exclude_text:
        from . import decompose  # deferred: decompose does not import this module

        regions = decompose.detect_text_regions(image)
        exclude_boxes = [r.bbox for r in regions]
    if exclude_boxes:
        keep = np.ones(len(pts), dtype=bool)
        for x0, y0, x1, y1 in exclude_boxes:
            inside = (
                (pts[:, 0] >= x0 - 2) & (pts[:, 0] < x1 + 2)
                & (pts[:, 1] >= y0 - 2) & (pts[:, 1] < y1 + 2)
            )
            keep &= ~inside
        pts = pts[keep]
        descriptors = descriptors[keep]
    return FeatureSet(image.content_digest, image.width, image.height, pts, descriptors)


def _mutual_matches(a: FeatureSet, b: FeatureSet) -> tuple[np.ndarray, np.ndarray]:
    matcher = cv2.BFMatcher(cv2.NORM_HAMMING, crossCheck=True)
    matches = matcher.match(a.descriptors, b.descriptors)
    if not matches:
        return np.zeros((0, 2)), np.zeros((0, 2))
    matches = sorted(matches, key=lambda m: (m.queryIdx, m.trainIdx))
    pa = np.array([a.keypoints[m.queryIdx] for m in matches], dtype=np.float64)
    pb = np.array([b.keypoints[m.trainIdx] for m in matches], dtype=np.float64)
    return pa, pb


def _similarity_from_pairs(za: np.ndarray, zb: np.ndarray) -> tuple[complex, complex] | None:
    """Least-squares similarity (as complex m, t with w = m*z + t)."""
    mean_a = za.mean()
    mean_b = zb.mean()
    ca = za - mean_a
    cb = zb - mean_b
    denom = np.vdot(ca, ca).real
    if denom < 1e-9:
        return None
    m = np.vdot(ca, cb) / denom
    t = mean_b - m * mean_a
    return m, t


def match_features(
    a: RasterImage | FeatureSet,
    b: RasterImage | FeatureSet,
    n_features: int = DEFAULT_FEATURES,
) -> MatchReport:
    """Count of geometrically consistent matches plus inlier boxes both sides.

    Symmetric by construction: the pair is evaluated in canonical digest
    order and the report swapped back.
    """
    fa = a if isinstance(a, FeatureSet) else extract_features(a, n_features)
    fb = b if isinstance(b, FeatureSet) else extract_features(b, n_features)
    if fa.digest <= fb.digest:
        return _match_ordered(fa, fb)
    report = _match_ordered(fb, fa)
    return MatchReport(
        count=report.count,
        raw_matches=report.raw_matches,
        bbox_a=report.bbox_b,
        bbox_b=report.bbox_a,
        coverage_a=report.coverage_b,
        coverage_b=report.coverage_a,
        transform=report.inverse_transform(),
    )


def _match_ordered(fa: FeatureSet, fb: FeatureSet) -> MatchReport:
    if len(fa) == 0 or len(fb) == 0:
        return MatchReport(0, 0, None, None, 0.0, 0.0)
    pa, pb = _mutual_matches(fa, fb)
    n = len(pa)
    if n < 2:
        return MatchReport(0, n, None, None, 0.0, 0.0)
    za = pa[:, 0] + 1j * pa[:, 1]
    zb = pb[:, 0] + 1j * pb[:, 1]

    rng = Splitmix64(seed_from_text(fa.digest + fb.digest))
    best_inliers: np.ndarray | None = None
    best_count = 0
    for _ in range(RANSAC_ITERS):
        i = rng.below(n)
        j = rng.below(n)
        if i == j:
            continue
        da = za[i] - za[j]
        if abs(da) < 1e-6:
            continue
        m = (zb[i] - zb[j]) / da
        scale = abs(m)
        if not _SCALE_RANGE[0] <= scale <= _SCALE_RANGE[1]:
            continue
        t = zb[i] - m * za[i]
        residual = np.abs(m * za + t - zb)
        inliers = residual <= REPROJECTION_TOL
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers
    if best_inliers is None or best_count < 2:
        return MatchReport(0, n, None, None, 0.0, 0.0)

    # refine with least squares over the consensus set, twice
    inliers = best_inliers
    for _ in range(2):
        fit = _similarity_from_pairs(za[inliers], zb[inliers])
        if fit is None:
            break
        m, t = fit
        if not _SCALE_RANGE[0] <= abs(m) <= _SCALE_RANGE[1]:
            break
        refined = np.abs(m * za + t - zb) <= REPROJECTION_TOL
        if int(refined.sum()) < 2:
            break
        inliers = refined

    count = int(inliers.sum())
    final_fit = _similarity_from_pairs(za[inliers], zb[inliers])
    transform = None
    if final_fit is not None:
        m, t = final_fit
        transform = (float(m.real), float(m.imag), float(t.real), float(t.imag))
    bbox_a = _inlier_box(pa[inliers], fa.width, fa.height)
    bbox_b = _inlier_box(pb[inliers], fb.width, fb.height)
    cov_a = _box_area(bbox_a) / (fa.width * fa.height)
    cov_b = _box_area(bbox_b) / (fb.width * fb.height)
    return MatchReport(
        count, n, bbox_a, bbox_b, min(1.0, cov_a), min(1.0, cov_b), transform
    )


def _inlier_box(points: np.ndarray, width: int, height: int) -> BBox:
    """Robust extent of the inlier cloud, padded by the detector margin.

    Percentile trimming keeps a handful of stray coincidental inliers from
    stretching the box; the pad reflects that keypoints cannot sit within the
    patch margin of an image edge, so the shared region extends past them.
    """
    margin = 31
    trim = min(3, len(points) // 12)
    xs = np.sort(points[:, 0])
    ys = np.sort(points[:, 1])
    x0, x1 = xs[trim], xs[len(xs) - 1 - trim]
    y0, y1 = ys[trim], ys[len(ys) - 1 - trim]
    return (
        max(0, int(x0) - margin),
        max(0, int(y0) - margin),
        min(width, int(np.ceil(x1)) + 1 + margin),
        min(height, int(np.ceil(y1)) + 1 + margin),
    )


def _box_area(box: BBox) -> float:
    return max(0, box[2] - box[0]) * max(0, box[3] - box[1])
