"""Dataset sampling and results aggregation.

Sampling picks a subset uniformly, then a file uniformly within it, rejecting
duplicates, driven by the portable splitmix-style generator so a
(manifest, seed, k) triple reproduces the same sample on any platform.
Aggregation produces one row per dataset (per-type counts, totals and
percentages); totals are always recomputed from counts, and any supplied
totals that disagree are flagged rather than trusted.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Any, Iterable

from .errors import InputError
from .index import ManifestItem, read_manifest
from .protocol import ALL_OUTCOMES, MEME_TYPES, NONMEME_TYPES, Verdict
from .rng import Splitmix64

REPORT_SCHEMA_VERSION = 1
CSV_COLUMNS = [
    "dataset", "CM", "FM", "MI", "TS", "MT",
    "meme_total", "nMIT", "nMM", "nonmeme_total", "sample_size",
]


@dataclass
class DatasetManifest:
    name: str
    subsets: dict[str, list[ManifestItem]]
    license_note: str | None = None

    @staticmethod
    def from_items(name: str, items: Iterable[ManifestItem]) -> "DatasetManifest":
        subsets: dict[str, list[ManifestItem]] = {}
        for item in items:
            subsets.setdefault(item.subset, []).append(item)
        return DatasetManifest(name, subsets)

    @staticmethod
    def load(path: str, name: str | None = None) -> "DatasetManifest":
        import os

        items = read_manifest(path)
        inferred = name or os.path.splitext(os.path.basename(path))[0]
        return DatasetManifest.from_items(inferred, items)

    @property
    def total(self) -> int:
        return sum(len(files) for files in self.subsets.values())


@dataclass
class SampleSet:
    dataset: str
    seed: int
    k: int
    selections: list[ManifestItem]
    truncated: bool = False  # k exceeded the corpus; whole corpus returned

    def to_json(self) -> dict[str, Any]:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "dataset": self.dataset,
            "seed": self.seed,
            "k": self.k,
            "truncated": self.truncated,
            "selections": [
                {"id": s.item_id, "path": s.path, "subset": s.subset}
                for s in self.selections
            ],
        }


def sample(manifest: DatasetManifest, k: int, seed: int) -> SampleSet:
    """Uniform-subset-then-uniform-file sampling without replacement."""
    if k < 1:
        raise InputError("sample size k must be >= 1")
    if manifest.total == 0:
        raise InputError("manifest is empty")
    subset_names = list(manifest.subsets.keys())
    if k >= manifest.total:
        everything = [item for name in subset_names for item in manifest.subsets[name]]
        return SampleSet(manifest.name, seed, k, everything, truncated=k > manifest.total)
    rng = Splitmix64(seed)
    chosen: set[tuple[str, int]] = set()
    selections: list[ManifestItem] = []
    while len(selections) < k:
        si = rng.below(len(subset_names))
        subset = manifest.subsets[subset_names[si]]
        fi = rng.below(len(subset))
        key = (subset_names[si], fi)
        if key in chosen:
            continue
        chosen.add(key)
        selections.append(subset[fi])
    return SampleSet(manifest.name, seed, k, selections)


@dataclass
class ReportRow:
    dataset: str
    counts: dict[str, int]
    sample_size: int
    flags: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        for outcome in ALL_OUTCOMES:
            self.counts.setdefault(outcome, 0)
        if self.meme_total + self.nonmeme_total != self.sample_size and not self.flags:
            # unflagged construction must conserve; externally supplied rows
            # that do not conserve arrive pre-flagged via row_from_counts
            raise InputError(
                f"{self.dataset}: counts sum to "
                f"{self.meme_total + self.nonmeme_total}, not {self.sample_size}"
            )

    @property
    def meme_total(self) -> int:
        return sum(self.counts[t] for t in MEME_TYPES)

    @property
    def nonmeme_total(self) -> int:
        return sum(self.counts[t] for t in NONMEME_TYPES)

    def percentage(self, outcome: str) -> float:
        return round(100.0 * self.counts[outcome] / self.sample_size, 1)

    @property
    def meme_percentage(self) -> float:
        return round(100.0 * self.meme_total / self.sample_size, 1)

    @property
    def nonmeme_percentage(self) -> float:
        return round(100.0 * self.nonmeme_total / self.sample_size, 1)

    def to_json(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset,
            "counts": {t: self.counts[t] for t in ALL_OUTCOMES},
            "meme_total": self.meme_total,
            "nonmeme_total": self.nonmeme_total,
            "sample_size": self.sample_size,
            "percentages": {t: self.percentage(t) for t in ALL_OUTCOMES},
            "meme_percentage": self.meme_percentage,
            "nonmeme_percentage": self.nonmeme_percentage,
            "flags": self.flags,
        }


def aggregate(verdicts: list[Verdict], sample_size: int, dataset: str = "dataset") -> ReportRow:
    """Counts and percentages for one dataset's verdict list."""
    if len(verdicts) != sample_size:
        raise InputError(f"expected {sample_size} verdicts, got {len(verdicts)}")
    counts = {outcome: 0 for outcome in ALL_OUTCOMES}
    for verdict in verdicts:
        outcome = getattr(verdict, "outcome", None)
        if outcome is None or outcome not in counts:
            raise InputError(f"verdict with missing or unknown outcome: {verdict!r}")
        counts[outcome] += 1
    return ReportRow(dataset, counts, sample_size)


def row_from_counts(
    dataset: str,
    counts: dict[str, int],
    printed_meme_total: int | None = None,
    printed_nonmeme_total: int | None = None,
    sample_size: int | None = None,
) -> ReportRow:
    """Row built from externally supplied counts; totals are recomputed and
    any disagreeing printed totals are flagged, never trusted."""
    counts = {outcome: int(counts.get(outcome, 0)) for outcome in ALL_OUTCOMES}
    meme_total = sum(counts[t] for t in MEME_TYPES)
    nonmeme_total = sum(counts[t] for t in NONMEME_TYPES)
    size = sample_size if sample_size is not None else meme_total + nonmeme_total
    flags = []
    if printed_meme_total is not None and printed_meme_total != meme_total:
        flags.append(
            f"meme total recomputed: counts sum to {meme_total}, printed {printed_meme_total}"
        )
    if printed_nonmeme_total is not None and printed_nonmeme_total != nonmeme_total:
        flags.append(
            f"nonmeme total recomputed: counts sum to {nonmeme_total}, "
            f"printed {printed_nonmeme_total}"
        )
    if sample_size is not None and meme_total + nonmeme_total != sample_size:
        # keep the supplied denominator so percentages stay comparable with
        # the printed table; the discrepancy itself is flagged
        flags.append(
            f"row does not conserve: {meme_total}+{nonmeme_total} != {sample_size}"
        )
    return ReportRow(dataset, counts, size, flags=flags)


@dataclass
class AuditReport:
    rows: list[ReportRow]
    schema_version: int = REPORT_SCHEMA_VERSION

    @property
    def average_meme_percentage(self) -> float:
        if not self.rows:
            return 0.0
        return round(sum(r.meme_percentage for r in self.rows) / len(self.rows), 1)

    @property
    def average_nonmeme_percentage(self) -> float:
        if not self.rows:
            return 0.0
        return round(sum(r.nonmeme_percentage for r in self.rows) / len(self.rows), 1)

    def to_json(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "rows": [r.to_json() for r in self.rows],
            "average_meme_percentage": self.average_meme_percentage,
            "average_nonmeme_percentage": self.average_nonmeme_percentage,
        }

    def write_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for row in self.rows:
                writer.writerow(
                    [
                        row.dataset,
                        row.counts["CM"], row.counts["FM"], row.counts["MI"],
                        row.counts["TS"], row.counts["MT"],
                        row.meme_total,
                        row.counts["nMIT"], row.counts["nMM"],
                        row.nonmeme_total,
                        row.sample_size,
                    ]
                )

    def render_figure(self, path: str) -> None:
        """Stacked per-dataset type proportions, written as an image file."""
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        order = ["CM", "FM", "MI", "TS", "MT", "nMIT", "nMM"]
        colors = {
            "CM": "#4c72b0", "FM": "#55a868", "MI": "#c44e52",
            "TS": "#8172b2", "MT": "#ccb974", "nMIT": "#9f9f9f", "nMM": "#5e5e5e",
        }
        datasets = [r.dataset for r in self.rows]
        fig, ax = plt.subplots(figsize=(8, max(2.0, 0.6 * len(self.rows) + 1.5)))
        left = [0.0] * len(self.rows)
        for outcome in order:
            widths = [r.percentage(outcome) for r in self.rows]
            ax.barh(datasets, widths, left=left, label=outcome, color=colors[outcome])
            left = [l + w for l, w in zip(left, widths)]
        ax.set_xlabel("% of sample")
        ax.set_xlim(0, 100)
        ax.invert_yaxis()
        ax.legend(ncol=7, fontsize=8, loc="upper center", bbox_to_anchor=(0.5, -0.12))
        ax.set_title("Verdict proportions by dataset")
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
