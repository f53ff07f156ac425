from __future__ import annotations

import pytest
from scipy import stats

from memetect.audit import AuditReport, DatasetManifest, ReportRow, aggregate, row_from_counts, sample
from memetect.errors import InputError
from memetect.index import ManifestItem
from memetect.protocol import Verdict
from memetect.rng import Splitmix64

# published reference vectors for the splitmix-style generator
SPLITMIX_VECTORS = {
    0x0: [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F],
    0x2A: [0xBDD732262FEB6E95, 0x28EFE333B266F103, 0x47526757130F9F52],
    0xDEADBEEF: [0x4ADFB90F68C9EB9B, 0xDE586A3141A10922, 0x021FBC2F8E1CFC1D],
}


def manifest_of(sizes: dict[str, int], name="ds") -> DatasetManifest:
    items = []
    for subset, count in sizes.items():
        for i in range(count):
            items.append(ManifestItem(f"{subset}-{i:05d}", f"/x/{subset}/{i}.png", subset))
    return DatasetManifest.from_items(name, items)


def test_splitmix64_reference_vectors():
    for seed, expected in SPLITMIX_VECTORS.items():
        rng = Splitmix64(seed)
        assert [rng.next_u64() for _ in expected] == expected


def test_sample_exact_corpus_returns_everything():
    manifest = manifest_of({"default": 200})
    result = sample(manifest, 200, seed=7)
    assert len(result.selections) == 200
    assert result.truncated is False
    assert len({s.item_id for s in result.selections}) == 200


def test_sample_k_larger_than_corpus_warns():
    manifest = manifest_of({"default": 50})
    result = sample(manifest, 200, seed=7)
    assert len(result.selections) == 50
    assert result.truncated is True


def test_sample_deterministic_across_runs():
    manifest = manifest_of({"train": 500, "dev": 100})
    a = sample(manifest, 200, seed=123456789)
    b = sample(manifest, 200, seed=123456789)
    assert [s.item_id for s in a.selections] == [s.item_id for s in b.selections]
    c = sample(manifest, 200, seed=987654321)
    assert [s.item_id for s in c.selections] != [s.item_id for s in a.selections]


def test_sample_frozen_vector():
    # frozen expected prefix: guards cross-platform / cross-version drift
    manifest = manifest_of({"a": 10, "b": 10})
    result = sample(manifest, 6, seed=42)
    assert [s.item_id for s in result.selections] == [
        "b-00001", "a-00004", "a-00002", "b-00008", "b-00004", "b-00006",
    ]


def test_sample_no_duplicates_property():
    manifest = manifest_of({"a": 40, "b": 7, "c": 90})
    for seed in range(20):
        result = sample(manifest, 60, seed=seed)
        ids = [s.item_id for s in result.selections]
        assert len(ids) == len(set(ids)) == 60


def test_sample_subset_uniform_semantics_chi2():
    # 100:1 subset skew; uniform-subset-first means the small subset's files
    # appear far more often per file; within each subset the draw is uniform
    manifest = manifest_of({"big": 300, "small": 3})
    trials = 800
    counts: dict[str, int] = {}
    for seed in range(trials):
        for s in sample(manifest, 30, seed=seed).selections:
            counts[s.item_id] = counts.get(s.item_id, 0) + 1
    small_counts = [counts.get(f"small-{i:05d}", 0) for i in range(3)]
    big_counts = [counts.get(f"big-{i:05d}", 0) for i in range(300)]
    assert min(small_counts) / trials > 3 * (sum(big_counts) / 300) / trials
    chi2, p = stats.chisquare(big_counts)
    assert p > 0.01


def test_aggregate_counts_and_identities():
    verdicts = (
        [Verdict("c", "CM")] * 5 + [Verdict("c", "MI")] * 7 + [Verdict("c", "TS")] * 3
        + [Verdict("c", "MT")] * 1 + [Verdict("c", "nMIT")] * 80 + [Verdict("c", "nMM")] * 4
        + [Verdict("c", "nMIT")] * 100
    )
    row = aggregate(verdicts, 200, dataset="hateful")
    assert row.meme_total == 16
    assert row.nonmeme_total == 184
    assert row.meme_total + row.nonmeme_total == 200


def test_aggregate_requires_matching_sample_size():
    with pytest.raises(InputError):
        aggregate([Verdict("c", "CM")], 2)


def test_aggregate_permutation_invariant():
    import random

    verdicts = [Verdict("c", o) for o in ["CM", "FM", "MI", "nMM", "nMIT", "TS", "MT", "nMIT"]]
    row1 = aggregate(list(verdicts), 8)
    random.Random(3).shuffle(verdicts)
    row2 = aggregate(verdicts, 8)
    assert row1.counts == row2.counts


def test_row_from_counts_flags_discrepancies():
    # self-consistent row: no flags
    clean = row_from_counts(
        "memo1",
        {"CM": 33, "FM": 7, "MI": 7, "TS": 6, "MT": 2, "nMIT": 39, "nMM": 6},
        printed_meme_total=55, printed_nonmeme_total=45, sample_size=100,
    )
    assert clean.flags == []
    # printed meme total disagrees with the count sum
    flagged = row_from_counts(
        "harmeme",
        {"CM": 14, "FM": 6, "MI": 18, "TS": 6, "MT": 3, "nMIT": 48, "nMM": 4},
        printed_meme_total=48, printed_nonmeme_total=52,
    )
    assert any("meme total recomputed" in f for f in flagged.flags)


def test_report_row_conservation_enforced():
    with pytest.raises(InputError):
        ReportRow("x", {"CM": 1, "nMIT": 1}, sample_size=5)


def test_report_outputs(tmp_path):
    rows = [
        row_from_counts("a", {"CM": 10, "FM": 0, "MI": 0, "TS": 0, "MT": 0, "nMIT": 85, "nMM": 5}),
        row_from_counts("b", {"CM": 0, "FM": 20, "MI": 0, "TS": 0, "MT": 0, "nMIT": 60, "nMM": 20}),
    ]
    report = AuditReport(rows)
    csv_path = tmp_path / "report.csv"
    json_path = tmp_path / "report.json"
    png_path = tmp_path / "report.png"
    report.write_csv(str(csv_path))
    report.write_json(str(json_path))
    report.render_figure(str(png_path))
    header = csv_path.read_text().splitlines()[0]
    assert header == "dataset,CM,FM,MI,TS,MT,meme_total,nMIT,nMM,nonmeme_total,sample_size"
    assert png_path.stat().st_size > 1000
    import json as _json

    doc = _json.loads(json_path.read_text())
    assert doc["schema_version"] == 1
    assert doc["rows"][0]["meme_percentage"] == 10.0
