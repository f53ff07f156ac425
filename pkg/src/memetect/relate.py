"""The shared-element / novel-element judgement between a candidate view and
one search hit.

A hit is related-but-distinct when at least one memetic element is shared
(background, segment, superimposed element, or text) and the pair still
differs by a novel element (textual or visual). Identical pairs are never
related-but-distinct; wide-coverage feature matches with matching text are
treated as recrops of the same item, which is a convention, not paper canon.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import cv2
import numpy as np

from .config import Config
from .decompose import DerivedView
from .features import MatchReport, match_features
from .imaging import RasterImage, dhash64, normalized_hamming
from .search import SearchHit
from .textmatch import containment, token_levenshtein

BBox = tuple[int, int, int, int]

AUTOMATED = "automated"
HUMAN = "human"

# human judgement choices, mirrored by the annotation workbench
CHOICE_RELATED_DISTINCT = "shares_element_distinct"
CHOICE_IDENTICAL = "identical"
CHOICE_UNRELATED = "unrelated"

_PIXEL_DIFF = 0.1


class ElementKind(str, enum.Enum):
    BACKGROUND = "background"
    SEGMENT = "segment"
    SUPERIMPOSED_ELEMENT = "superimposed_element"
    TEXT = "text"


ALL_KINDS = frozenset(ElementKind)


@dataclass(frozen=True)
class MemeticElementMatch:
    kind: ElementKind
    similarity: float
    candidate_region: BBox | None = None
    hit_region: BBox | None = None

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "similarity": round(self.similarity, 4),
            "candidate_region": self.candidate_region,
            "hit_region": self.hit_region,
        }


@dataclass(frozen=True)
class NoveltyEvidence:
    text_novelty: float
    visual_novelty: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.text_novelty <= 1.0 and 0.0 <= self.visual_novelty <= 1.0):
            raise ValueError("novelty values must lie in [0, 1]")

    def to_json(self) -> dict:
        return {
            "text_novelty": round(self.text_novelty, 4),
            "visual_novelty": round(self.visual_novelty, 4),
        }


@dataclass(frozen=True)
class RelatednessJudgement:
    hit_id: str
    related_but_distinct: bool
    identical: bool
    matches: tuple[MemeticElementMatch, ...]
    novelty: NoveltyEvidence
    decided_by: str = AUTOMATED

    def __post_init__(self) -> None:
        if self.related_but_distinct and self.identical:
            raise ValueError("identical and related_but_distinct are mutually exclusive")

    def to_json(self) -> dict:
        return {
            "hit_id": self.hit_id,
            "related_but_distinct": self.related_but_distinct,
            "identical": self.identical,
            "matches": [m.to_json() for m in self.matches],
            "novelty": self.novelty.to_json(),
            "decided_by": self.decided_by,
        }


Matcher = Callable[[RasterImage, SearchHit], MatchReport | None]


def _default_matcher(image: RasterImage, hit: SearchHit) -> MatchReport | None:
    if hit.image is None:
        return None
    return match_features(image, hit.image)


def _hit_hash(hit: SearchHit) -> int | None:
    if hit.dhash64 is not None:
        return hit.dhash64
    if hit.image is not None:
        return dhash64(hit.image)
    return None


def _visual_novelty(
    image: RasterImage,
    hit: SearchHit,
    matched_regions: list[BBox],
    report: MatchReport | None,
) -> float:
    """Fraction of the candidate area outside matched regions whose pixels
    differ from the hit. With a verified transform the hit is warped into the
    candidate frame first; a plain resize would count alignment distortion as
    novelty whenever the candidate view is a crop."""
    if hit.image is None:
        return 0.0
    gray_c = image.gray()
    gray_h = hit.image.gray()
    if report is not None and report.transform is not None and report.count >= 4:
        mr, mi, tr, ti = report.transform
        matrix = np.array([[mr, -mi, tr], [mi, mr, ti]], dtype=np.float64)
        aligned = cv2.warpAffine(
            gray_h,
            matrix,
            (image.width, image.height),
            flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
            borderMode=cv2.BORDER_CONSTANT,
            borderValue=-1.0,
        )
        out_of_hit = aligned < 0
        differs = (np.abs(gray_c - aligned) > _PIXEL_DIFF) | out_of_hit
    else:
        resized = cv2.resize(gray_h, (image.width, image.height), interpolation=cv2.INTER_AREA)
        differs = np.abs(gray_c - resized) > _PIXEL_DIFF
    outside = np.ones_like(differs, dtype=bool)
    for x0, y0, x1, y1 in matched_regions:
        outside[max(0, y0) : y1, max(0, x0) : x1] = False
    if not outside.any():
        return 0.0
    return float(differs[outside].mean())


def judge(
    candidate_view: DerivedView | RasterImage,
    hit: SearchHit,
    mode: str = AUTOMATED,
    kinds: frozenset[ElementKind] | set[ElementKind] = ALL_KINDS,
    candidate_text: str = "",
    config: Config | None = None,
    matcher: Matcher | None = None,
    human_choice: str | None = None,
) -> RelatednessJudgement:
    """Judge one (candidate view, hit) pair.

    Automated mode is deterministic for fixed thresholds. In human mode the
    recorded choice decides the outcome; the automated evidence is still
    attached so reviewers can see what the machine saw.
    """
    cfg = config or Config()
    image = candidate_view.image if isinstance(candidate_view, DerivedView) else candidate_view
    if image is None:
        raise ValueError("candidate view carries no image")
    if mode == HUMAN and human_choice is None:
        raise ValueError("human mode requires a recorded choice")

    matcher = matcher or _default_matcher
    text_novelty = token_levenshtein(candidate_text, hit.text)

    hit_hash = _hit_hash(hit)
    whole_distance = (
        normalized_hamming(dhash64(image), hit_hash) if hit_hash is not None else hit.visual_distance
    )

    needs_features = bool(
        kinds & {ElementKind.SEGMENT, ElementKind.SUPERIMPOSED_ELEMENT}
    ) or (ElementKind.BACKGROUND in kinds and (1.0 - whole_distance) < cfg.relate_tau_share)
    report = matcher(image, hit) if needs_features else None

    matches: list[MemeticElementMatch] = []
    whole_box = (0, 0, image.width, image.height)
    if ElementKind.BACKGROUND in kinds:
        hash_similarity = 1.0 - whole_distance
        if hash_similarity >= cfg.relate_tau_share:
            matches.append(
                MemeticElementMatch(ElementKind.BACKGROUND, hash_similarity, whole_box, None)
            )
        elif (
            report is not None
            and report.count >= cfg.relate_tau_feat
            and report.coverage_a >= 0.6
        ):
            similarity = min(1.0, cfg.relate_tau_share * report.count / cfg.relate_tau_feat)
            matches.append(
                MemeticElementMatch(
                    ElementKind.BACKGROUND, similarity, report.bbox_a, report.bbox_b
                )
            )
    for kind in (ElementKind.SEGMENT, ElementKind.SUPERIMPOSED_ELEMENT):
        if kind in kinds and report is not None and report.count >= cfg.relate_tau_feat:
            similarity = min(1.0, cfg.relate_tau_share * report.count / cfg.relate_tau_feat)
            matches.append(
                MemeticElementMatch(kind, similarity, report.bbox_a, report.bbox_b)
            )
    if ElementKind.TEXT in kinds and candidate_text:
        text_similarity = containment(candidate_text, hit.text)
        if text_similarity >= cfg.relate_tau_text:
            matches.append(MemeticElementMatch(ElementKind.TEXT, text_similarity))

    identical = (
        whole_distance <= cfg.relate_identity_distance
        and text_novelty <= cfg.relate_identity_text
    )
    if (
        not identical
        and report is not None
        and report.coverage_a > 0.9
        and report.coverage_b > 0.9
        and report.count >= cfg.relate_tau_feat
        and text_novelty <= cfg.relate_identity_text
    ):
        identical = True  # pure-recrop convention

    matched_regions = [m.candidate_region for m in matches if m.candidate_region]
    visual_novelty = _visual_novelty(image, hit, matched_regions, report)
    novelty = NoveltyEvidence(text_novelty=text_novelty, visual_novelty=min(1.0, visual_novelty))

    related = (
        not identical
        and bool(matches)
        and (
            text_novelty >= cfg.relate_tau_novel
            or visual_novelty >= cfg.relate_tau_novel_visual
        )
    )

    if mode == HUMAN:
        related = human_choice == CHOICE_RELATED_DISTINCT
        identical = human_choice == CHOICE_IDENTICAL
        return RelatednessJudgement(
            hit.hit_id, related, identical, tuple(matches), novelty, decided_by=HUMAN
        )
    return RelatednessJudgement(
        hit.hit_id, related, identical, tuple(matches), novelty, decided_by=AUTOMATED
    )


def viral_check(judgements: list[RelatednessJudgement]) -> bool:
    """True iff the search came back as copies of the candidate itself:
    at least one identical hit and no related-but-distinct hit."""
    if not judgements:
        return False
    any_identical = any(j.identical for j in judgements)
    any_related = any(j.related_but_distinct for j in judgements)
    return any_identical and not any_related
