"""Search providers: the deterministic local corpus index and the external
HTTP reverse-image-search client.

Local image retrieval is two-stage: an exact BK-tree ranking on the 64-bit
difference hash supplies the shortlist, and a global descriptor probe (one
nearest-descriptor pass over all indexed features) supplies the feature-match
ratio used to refine those distances, plus extra candidates whose shared
elements are invisible to a whole-image hash (cropped or recomposed content).
"""
from __future__ import annotations

import base64
import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Protocol

import cv2
import numpy as np

from .bktree import BKTree
from .config import Config
from .errors import ProviderUnavailableError
from .features import FeatureSet, MatchReport, extract_features, match_features
from .imaging import RasterImage, dhash64, hamming64
from .index import LocalIndex, LocalIndexEntry
from .textmatch import containment, normalize_tokens

ORIGIN_LOCAL = "local_corpus"
ORIGIN_EXTERNAL = "external_service"

# descriptor pairs farther than this (of 256 bits) are noise, not reuse
_PROBE_MAX_DISTANCE = 48
_PROBE_MIN_COUNT = 6


@dataclass
class SearchHit:
    hit_id: str
    visual_distance: float
    text: str = ""
    origin: str = ORIGIN_LOCAL
    path: str | None = None
    source_url: str | None = None
    dhash64: int | None = None
    text_score: float | None = None
    image: RasterImage | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "hit_id": self.hit_id,
            "visual_distance": round(self.visual_distance, 6),
            "text": self.text,
            "origin": self.origin,
            "source_url": self.source_url,
            "text_score": self.text_score,
        }


class SearchProvider(Protocol):
    identity: str
    supports_image: bool
    supports_text: bool

    def image_search(self, image: RasterImage, n: int) -> list[SearchHit]: ...

    def text_search(self, query: str, n: int) -> list[SearchHit]: ...


class LocalSearchProvider:
    """IS()/TS() over a LocalIndex; immutable after construction."""

    supports_image = True
    supports_text = True

    def __init__(self, index: LocalIndex, config: Config | None = None) -> None:
        self.index = index
        self.config = config or Config()
        self.identity = f"local:{index.digest()[:16]}:{len(index)}"
        self._by_id = {e.item_id: e for e in index.entries}
        self._tree = BKTree()
        for entry in index.entries:
            self._tree.add(entry.dhash64, entry.item_id)
        self._matcher = cv2.BFMatcher(cv2.NORM_HAMMING)
        if index.entries and any(len(e.descriptors) for e in index.entries):
            self._global_desc = np.vstack([e.descriptors for e in index.entries])
            owners = []
            for i, entry in enumerate(index.entries):
                owners.extend([i] * len(entry.descriptors))
            self._owners = np.array(owners, dtype=np.int64)
        else:
            self._global_desc = np.zeros((0, 32), dtype=np.uint8)
            self._owners = np.zeros((0,), dtype=np.int64)
        self._query_features: dict[str, FeatureSet] = {}
        self._entry_features: dict[str, FeatureSet] = {}
        self._match_cache: dict[tuple[str, str], MatchReport] = {}
        self._image_cache: dict[str, RasterImage] = {}
        self._lock = threading.Lock()

    # -- feature plumbing ---------------------------------------------------

    def _features_for(self, image: RasterImage) -> FeatureSet:
        key = image.content_digest
        with self._lock:
            cached = self._query_features.get(key)
        if cached is not None:
            return cached
        try:
            feats = extract_features(image, self.config.search_orb_features)
        except Exception:
            feats = FeatureSet(
                key, image.width, image.height,
                np.zeros((0, 2), dtype=np.float32), np.zeros((0, 32), dtype=np.uint8),
            )
        with self._lock:
            if len(self._query_features) > 1024:
                self._query_features.clear()
            self._query_features[key] = feats
        return feats

    def _entry_feature_set(self, entry: LocalIndexEntry) -> FeatureSet:
        with self._lock:
            cached = self._entry_features.get(entry.item_id)
        if cached is not None:
            return cached
        image = self.load_entry_image(entry.item_id)
        feats = FeatureSet(
            digest=image.content_digest if image else f"entry:{entry.item_id}",
            width=image.width if image else 0,
            height=image.height if image else 0,
            keypoints=entry.keypoints,
            descriptors=entry.descriptors,
        )
        with self._lock:
            self._entry_features[entry.item_id] = feats
        return feats

    def match_evidence(self, image: RasterImage, hit_id: str) -> MatchReport:
        """Geometric verification between a query image and an indexed item,
        cached per (query digest, item) pair."""
        entry = self._by_id[hit_id]
        key = (image.content_digest, hit_id)
        with self._lock:
            cached = self._match_cache.get(key)
        if cached is not None:
            return cached
        report = match_features(self._features_for(image), self._entry_feature_set(entry))
        with self._lock:
            if len(self._match_cache) > 8192:
                self._match_cache.clear()
            self._match_cache[key] = report
        return report

    def load_entry_image(self, hit_id: str) -> RasterImage | None:
        entry = self._by_id.get(hit_id)
        if entry is None:
            return None
        with self._lock:
            cached = self._image_cache.get(hit_id)
        if cached is not None:
            return cached
        try:
            image = RasterImage.from_file(entry.path)
        except Exception:
            return None
        with self._lock:
            if len(self._image_cache) > 512:
                self._image_cache.clear()
            self._image_cache[hit_id] = image
        return image

    # -- retrieval ----------------------------------------------------------

    def hash_ranking(self, image: RasterImage, k: int) -> list[tuple[int, str]]:
        """Exact (hamming bits, item id) ranking of the hash stage."""
        return self._tree.nearest(dhash64(image), k)

    def _probe_counts(self, feats: FeatureSet) -> dict[int, int]:
        """Entry index -> count of query descriptors with a close match in
        that entry (top-k neighbours within the distance cutoff, one credit
        per descriptor per entry). k > 1 matters: byte-identical copies of the
        query in the corpus would otherwise absorb every nearest match."""
        if len(feats) == 0 or len(self._global_desc) == 0:
            return {}
        k = min(4, len(self._global_desc))
        matches = self._matcher.knnMatch(feats.descriptors, self._global_desc, k=k)
        counts: dict[int, int] = {}
        for group in matches:
            seen: set[int] = set()
            for m in group:
                if m.distance > _PROBE_MAX_DISTANCE:
                    break
                owner = int(self._owners[m.trainIdx])
                if owner in seen:
                    continue
                seen.add(owner)
                counts[owner] = counts.get(owner, 0) + 1
        return counts

    def image_search(self, image: RasterImage, n: int) -> list[SearchHit]:
        if n < 1:
            raise ValueError("n must be >= 1")
        if not self.index.entries:
            return []
        shortlist_size = max(1, self.config.search_refine_factor * n)
        ranked = self.hash_ranking(image, shortlist_size)
        feats = self._features_for(image)
        counts = self._probe_counts(feats)
        candidate_ids = {item_id for _, item_id in ranked}
        for owner, count in counts.items():
            if count >= _PROBE_MIN_COUNT:
                candidate_ids.add(self.index.entries[owner].item_id)
        entry_pos = {e.item_id: i for i, e in enumerate(self.index.entries)}
        qhash = dhash64(image)
        # the ratio saturates at twice the shared-element threshold, so a
        # localized element reuse (a small fraction of either feature set)
        # still earns the full refinement discount
        denom = max(1, 2 * self.config.relate_tau_feat)
        scored = []
        for item_id in candidate_ids:
            entry = self._by_id[item_id]
            ham = hamming64(qhash, entry.dhash64) / 64.0
            count = counts.get(entry_pos[item_id], 0)
            ratio = min(1.0, count / denom)
            refined = ham * (1.0 - 0.5 * ratio)
            scored.append((refined, item_id, entry, ratio))
        scored.sort(key=lambda s: (s[0], s[1]))
        hits = []
        for refined, item_id, entry, ratio in scored[:n]:
            hits.append(
                SearchHit(
                    hit_id=item_id,
                    visual_distance=refined,
                    text=entry.text,
                    origin=ORIGIN_LOCAL,
                    path=entry.path,
                    dhash64=entry.dhash64,
                    image=self.load_entry_image(item_id),
                )
            )
        return hits

    def text_search(self, query: str, n: int) -> list[SearchHit]:
        if n < 1:
            raise ValueError("n must be >= 1")
        tokens = normalize_tokens(query, drop_stopwords=True)
        if not tokens:
            return []
        scored = []
        for entry in self.index.entries:
            score = containment(query, entry.text)
            if score >= 0.6:
                scored.append((-score, entry.item_id, entry, score))
        scored.sort(key=lambda s: (s[0], s[1]))
        hits = []
        for _, item_id, entry, score in scored[:n]:
            hits.append(
                SearchHit(
                    hit_id=item_id,
                    visual_distance=1.0,
                    text=entry.text,
                    origin=ORIGIN_LOCAL,
                    path=entry.path,
                    dhash64=entry.dhash64,
                    text_score=score,
                    image=self.load_entry_image(item_id),
                )
            )
        return hits


class RateLimiter:
    def __init__(self, per_second: float) -> None:
        self.interval = 1.0 / per_second if per_second > 0 else 0.0
        self._lock = threading.Lock()
        self._last = 0.0

    def wait(self) -> None:
        if self.interval <= 0:
            return
        with self._lock:
            now = time.monotonic()
            delay = self._last + self.interval - now
            if delay > 0:
                time.sleep(delay)
                now = time.monotonic()
            self._last = now


class DiskCache:
    """JSON cache keyed by digest; writes are write-temp-then-rename."""

    def __init__(self, directory: str) -> None:
        self.directory = directory
        os.makedirs(directory, exist_ok=True)

    def _path(self, key: str) -> str:
        return os.path.join(self.directory, hashlib.sha256(key.encode()).hexdigest() + ".json")

    def get(self, key: str) -> dict[str, Any] | None:
        path = self._path(key)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return json.load(fh)
        except (OSError, json.JSONDecodeError):
            return None

    def put(self, key: str, payload: dict[str, Any]) -> None:
        path = self._path(key)
        tmp = path + f".{os.getpid()}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True)
        os.replace(tmp, path)


class GenericJsonAdapter:
    """Request/response mapping for a simple JSON search endpoint.

    Public engines differ, so this is pluggable: anything with
    build_request/parse_response can stand in.
    """

    def build_request(self, kind: str, payload: Any, n: int, api_key: str) -> dict[str, Any]:
        body: dict[str, Any] = {"kind": kind, "n": n}
        if kind == "image":
            body["image_b64"] = base64.b64encode(payload).decode("ascii")
        else:
            body["query"] = payload
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return {"json": body, "headers": headers}

    def parse_response(self, document: dict[str, Any]) -> list[dict[str, Any]]:
        hits = document.get("hits")
        if not isinstance(hits, list):
            raise ValueError("response missing 'hits' list")
        return hits


def _default_fetch(url: str, request: dict[str, Any], timeout: float) -> dict[str, Any]:
    import requests

    response = requests.post(
        url, json=request.get("json"), headers=request.get("headers"), timeout=timeout
    )
    if response.status_code != 200:
        raise ProviderUnavailableError(f"search endpoint returned {response.status_code}")
    return response.json()


class ExternalSearchClient:
    """Reverse-image-search client with an on-disk response cache and a
    serialised rate limit; at most one network fetch per content digest per
    cache lifetime."""

    supports_image = True
    supports_text = True

    def __init__(
        self,
        endpoint: str,
        api_key: str = "",
        cache_dir: str | None = None,
        rate_limit: float = 1.0,
        adapter: Any | None = None,
        fetch: Callable[..., dict[str, Any]] | None = None,
        timeout: float = 20.0,
    ) -> None:
        if not endpoint:
            raise ProviderUnavailableError("no search endpoint configured")
        self.endpoint = endpoint
        self.api_key = api_key
        self.identity = f"external:{endpoint}"
        self.adapter = adapter or GenericJsonAdapter()
        self.cache = DiskCache(cache_dir) if cache_dir else None
        self.limiter = RateLimiter(rate_limit)
        self.fetch = fetch or _default_fetch
        self.timeout = timeout
        self.network_calls = 0

    def _run(self, kind: str, cache_key: str, payload: Any, n: int) -> list[SearchHit]:
        cached = self.cache.get(cache_key) if self.cache else None
        if cached is not None:
            raw_hits = cached["hits"]
        else:
            request = self.adapter.build_request(kind, payload, n, self.api_key)
            self.limiter.wait()
            self.network_calls += 1
            try:
                document = self.fetch(self.endpoint, request, self.timeout)
            except ProviderUnavailableError:
                raise
            except Exception as exc:
                raise ProviderUnavailableError(f"search request failed: {exc}") from exc
            try:
                raw_hits = self.adapter.parse_response(document)
            except Exception as exc:
                raise ProviderUnavailableError(f"unusable search response: {exc}") from exc
            if self.cache:
                self.cache.put(cache_key, {"hits": raw_hits, "schema_version": 1})
        hits = []
        for i, raw in enumerate(raw_hits[:n]):
            distance = float(raw.get("distance", 1.0))
            hits.append(
                SearchHit(
                    hit_id=str(raw.get("id", f"ext-{i}")),
                    visual_distance=min(1.0, max(0.0, distance)),
                    text=str(raw.get("text", "")),
                    origin=ORIGIN_EXTERNAL,
                    source_url=raw.get("url"),
                    dhash64=int(raw["dhash64"], 16) if raw.get("dhash64") else None,
                )
            )
        hits.sort(key=lambda h: (h.visual_distance, h.hit_id))
        return hits

    def image_search(self, image: RasterImage, n: int) -> list[SearchHit]:
        key = f"image:{image.content_digest}:{n}"
        return self._run("image", key, image.to_png_bytes(), n)

    def text_search(self, query: str, n: int) -> list[SearchHit]:
        tokens = normalize_tokens(query, drop_stopwords=True)
        if not tokens:
            return []
        normalized = " ".join(tokens)
        key = f"text:{hashlib.sha256(normalized.encode()).hexdigest()}:{n}"
        hits = self._run("text", key, normalized, n)
        hits.sort(key=lambda h: (-(h.text_score or 0.0), h.hit_id))
        return hits
