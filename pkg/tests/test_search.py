from __future__ import annotations

import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import synth
from memetect.bktree import BKTree
from memetect.config import Config
from memetect.errors import IndexFormatError, InsufficientFeaturesError, ProviderUnavailableError
from memetect.features import match_features
from memetect.imaging import RasterImage, dhash64, hamming64, normalized_hamming
from memetect.index import ManifestItem, build_index, load_index, read_manifest, save_index
from memetect.search import ExternalSearchClient, LocalSearchProvider, SearchHit


def write_corpus(tmp_path, arrays):
    items = []
    for i, arr in enumerate(arrays):
        path = tmp_path / f"item{i:03d}.png"
        synth.save_png(arr, path)
        items.append(ManifestItem(f"item{i:03d}", str(path)))
    return items


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("corpus")
    arrays = [synth.make_background(seed) for seed in range(12)]
    items = write_corpus(tmp, arrays)
    index, report = build_index(items)
    assert report.warnings == []
    return arrays, items, index


# -- hashing metric properties -------------------------------------------------

@given(st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1))
@settings(max_examples=200, deadline=None)
def test_normalized_hamming_is_a_metric(a, b, c):
    assert normalized_hamming(a, a) == 0.0
    assert normalized_hamming(a, b) == normalized_hamming(b, a)
    assert normalized_hamming(a, c) <= normalized_hamming(a, b) + normalized_hamming(b, c)
    assert 0.0 <= normalized_hamming(a, b) <= 1.0


@given(st.lists(st.integers(0, 2**64 - 1), min_size=1, max_size=80), st.integers(0, 2**64 - 1))
@settings(max_examples=60, deadline=None)
def test_bktree_matches_exhaustive_scan(keys, query):
    tree = BKTree()
    for i, key in enumerate(keys):
        tree.add(key, f"id{i:03d}")
    brute = sorted((hamming64(query, key), f"id{i:03d}") for i, key in enumerate(keys))
    for k in (1, 3, len(keys)):
        assert tree.nearest(query, k) == brute[:k]


# -- index build/persist --------------------------------------------------------

def test_index_build_counts_and_idempotent_persistence(tmp_path, small_corpus):
    _, items, index = small_corpus
    assert len(index) == len(items)
    index2, _ = build_index(items)
    assert index.digest() == index2.digest()
    p1, p2 = tmp_path / "a.idx", tmp_path / "b.idx"
    save_index(index, str(p1))
    save_index(index2, str(p2))
    assert p1.read_bytes() == p2.read_bytes()
    loaded = load_index(str(p1))
    assert loaded.digest() == index.digest()


def test_index_corrupt_file_excluded_with_warning(tmp_path):
    arrays = [synth.make_background(seed) for seed in range(9)]
    items = write_corpus(tmp_path, arrays)
    bad = tmp_path / "broken.png"
    bad.write_bytes(b"this is not an image")
    items.append(ManifestItem("broken", str(bad)))
    index, report = build_index(items)
    assert len(index) == 9
    assert len(report.warnings) == 1 and "broken" in report.warnings[0]


def test_index_empty_manifest_is_valid(tmp_path):
    index, report = build_index([])
    assert len(index) == 0 and report.built == 0
    provider = LocalSearchProvider(index)
    assert provider.image_search(RasterImage.from_array(synth.make_background(1)), 5) == []


def test_index_version_mismatch_refused(tmp_path, small_corpus):
    _, _, index = small_corpus
    path = tmp_path / "v.idx"
    save_index(index, str(path))
    blob = bytearray(path.read_bytes())
    blob[6] = 99  # format-version byte
    path.write_bytes(bytes(blob))
    with pytest.raises(IndexFormatError):
        load_index(str(path))


def test_manifest_roundtrip(tmp_path):
    manifest = tmp_path / "corpus.jsonl"
    synth.save_png(synth.make_background(1), tmp_path / "a.png")
    manifest.write_text(
        json.dumps({"id": "a", "path": "a.png", "subset": "train"}) + "\n"
    )
    items = read_manifest(str(manifest))
    assert items[0].item_id == "a"
    assert items[0].subset == "train"
    assert os.path.isabs(items[0].path)


# -- image search ---------------------------------------------------------------

def test_image_search_identity_first_with_zero_distance(small_corpus):
    arrays, _, index = small_corpus
    provider = LocalSearchProvider(index)
    hits = provider.image_search(RasterImage.from_array(arrays[4]), 5)
    assert hits[0].hit_id == "item004"
    assert hits[0].visual_distance == 0.0


def test_image_search_jpeg_recompression_stays_close(small_corpus):
    arrays, _, index = small_corpus
    provider = LocalSearchProvider(index)
    query = RasterImage.from_array(synth.jpeg_recompress(arrays[7], quality=80))
    hits = provider.image_search(query, 12)
    top3 = [h.hit_id for h in hits[:3]]
    assert "item007" in top3
    target = next(h for h in hits if h.hit_id == "item007")
    assert target.visual_distance <= 0.15


def test_hash_stage_equals_bruteforce_oracle(tmp_path):
    arrays = [synth.make_background(1000 + seed) for seed in range(100)]
    items = write_corpus(tmp_path, arrays)
    index, _ = build_index(items)
    provider = LocalSearchProvider(index)
    hashes = {it.item_id: e.dhash64 for it, e in zip(items, index.entries)}
    for qseed in range(10):
        query = RasterImage.from_array(synth.make_background(5000 + qseed))
        qhash = dhash64(query)
        brute = sorted((hamming64(qhash, h), item_id) for item_id, h in hashes.items())
        got = provider.hash_ranking(query, 10)
        assert got == brute[:10]


def test_image_search_results_sorted_and_capped(small_corpus):
    arrays, _, index = small_corpus
    provider = LocalSearchProvider(index)
    hits = provider.image_search(RasterImage.from_array(arrays[0]), 6)
    assert len(hits) <= 6
    distances = [h.visual_distance for h in hits]
    assert distances == sorted(distances)


# -- text search ------------------------------------------------------------------

@pytest.fixture(scope="module")
def text_corpus(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("textcorpus")
    phrase = "better love story than twilight"
    arrays = []
    for i in range(4):
        arr = synth.make_structured_background(0x5A5A5A5A00FF00FF + i, seed=i)
        synth.overlay_caption(arr, phrase, pos="top", band_frac=0.2, size=22)
        arrays.append(arr)
    for i in range(50):
        arr = synth.make_background(800 + i)
        synth.overlay_caption(arr, f"unrelated caption number {i}", pos="top")
        arrays.append(arr)
    items = write_corpus(tmp, arrays)
    index, _ = build_index(items)
    return index


def test_text_search_exact_match_ranks_first(text_corpus):
    provider = LocalSearchProvider(text_corpus)
    entry = text_corpus.entries[0]
    hits = provider.text_search(entry.text, 10)
    assert hits and hits[0].hit_id == entry.item_id


def test_text_search_returns_exactly_the_phrase_bearing_items(text_corpus):
    provider = LocalSearchProvider(text_corpus)
    hits = provider.text_search("better love story than twilight", 50)
    assert sorted(h.hit_id for h in hits) == ["item000", "item001", "item002", "item003"]


def test_text_search_stopword_query_is_empty(text_corpus):
    provider = LocalSearchProvider(text_corpus)
    assert provider.text_search("the of and a an", 10) == []


# -- feature matching --------------------------------------------------------------

def test_match_features_identity_symmetric():
    image = RasterImage.from_array(synth.make_background(42))
    report = match_features(image, image)
    assert report.count > 100
    assert report.coverage_a > 0.9 and report.coverage_b > 0.9


def test_match_features_symmetry_on_distinct_pair():
    a = RasterImage.from_array(synth.make_background(43))
    b = RasterImage.from_array(synth.make_background(44))
    r_ab = match_features(a, b)
    r_ba = match_features(b, a)
    assert r_ab.count == r_ba.count
    assert r_ab.bbox_a == r_ba.bbox_b and r_ab.bbox_b == r_ba.bbox_a


def test_match_features_localizes_pasted_element():
    base = synth.make_background(45, 400, 400)
    elem = synth.make_element(8, 200, 200)
    box = synth.paste_element(base, elem, 90, 110)
    report = match_features(RasterImage.from_array(elem), RasterImage.from_array(base))
    assert report.count >= 25
    bx = report.bbox_b
    inter = max(0, min(bx[2], box[2]) - max(bx[0], box[0])) * max(0, min(bx[3], box[3]) - max(bx[1], box[1]))
    union = (bx[2] - bx[0]) * (bx[3] - bx[1]) + (box[2] - box[0]) * (box[3] - box[1]) - inter
    assert inter / union >= 0.5


def test_match_features_noise_pairs_below_threshold():
    counts = []
    for seed in range(8):
        a = RasterImage.from_array(synth.make_background(4600 + seed))
        b = RasterImage.from_array(synth.make_background(4700 + seed))
        counts.append(match_features(a, b).count)
    assert max(counts) < 25  # shared-element threshold


def test_match_features_small_image_errors():
    tiny = RasterImage.from_array(np.zeros((16, 16, 3), dtype=np.uint8))
    big = RasterImage.from_array(synth.make_background(1))
    with pytest.raises(InsufficientFeaturesError):
        match_features(tiny, big)


# -- external client ----------------------------------------------------------------

def fake_fetch_factory(responses):
    calls = {"n": 0}

    def fetch(url, request, timeout):
        calls["n"] += 1
        result = responses[min(calls["n"] - 1, len(responses) - 1)]
        if isinstance(result, Exception):
            raise result
        return result

    return fetch, calls


def test_external_client_caches_per_digest(tmp_path):
    payload = {"hits": [{"id": "w1", "distance": 0.1, "text": "t", "url": "http://x/1"}]}
    fetch, calls = fake_fetch_factory([payload])
    client = ExternalSearchClient(
        "https://search.example/api", api_key="k",
        cache_dir=str(tmp_path / "cache"), rate_limit=0, fetch=fetch,
    )
    image = RasterImage.from_array(synth.make_background(1))
    first = client.image_search(image, 5)
    second = client.image_search(image, 5)
    assert calls["n"] == 1  # served from disk cache after the first call
    assert [h.hit_id for h in first] == [h.hit_id for h in second] == ["w1"]
    assert first[0].origin == "external_service"


def test_external_client_failure_is_distinct_from_empty(tmp_path):
    fetch, _ = fake_fetch_factory([ConnectionError("boom")])
    client = ExternalSearchClient(
        "https://search.example/api", cache_dir=str(tmp_path / "c"), rate_limit=0, fetch=fetch
    )
    with pytest.raises(ProviderUnavailableError):
        client.image_search(RasterImage.from_array(synth.make_background(2)), 5)
    ok_fetch, _ = fake_fetch_factory([{"hits": []}])
    client2 = ExternalSearchClient("https://search.example/api", rate_limit=0, fetch=ok_fetch)
    assert client2.image_search(RasterImage.from_array(synth.make_background(3)), 5) == []


def test_external_client_rate_limit_serializes(tmp_path):
    import time

    payload = {"hits": []}
    fetch, calls = fake_fetch_factory([payload, payload, payload])
    client = ExternalSearchClient(
        "https://search.example/api", rate_limit=20.0, fetch=fetch
    )
    t0 = time.monotonic()
    for seed in range(3):
        client.image_search(RasterImage.from_array(synth.make_background(seed)), 2)
    elapsed = time.monotonic() - t0
    assert calls["n"] == 3
    assert elapsed >= 2 * (1.0 / 20.0)
