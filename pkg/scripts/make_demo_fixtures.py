"""Build a small demo corpus + index for the workbench and README walkthrough.

Usage: python3 scripts/make_demo_fixtures.py OUTDIR

Writes OUTDIR/corpus.jsonl, OUTDIR/corpus.idx, two candidate images
(cm_candidate.png, mt_candidate.png) and meta.json naming the planted
relatives and expected verdicts.
"""
from __future__ import annotations

import json
import os
import sys

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(REPO, "tests"))

import synth  # noqa: E402
from memetect.index import ManifestItem, build_index, save_index  # noqa: E402


def main(outdir: str) -> int:
    os.makedirs(outdir, exist_ok=True)
    images = {}

    base = synth.make_background(12001)
    cm_candidate = base.copy()
    synth.overlay_caption(cm_candidate, "demo caption here", pos="top")
    cm_relative = base.copy()
    synth.overlay_caption(cm_relative, "entirely other words", pos="top")
    images["cmrel"] = cm_relative

    trend_caption = "bazu gheta minor vexed"
    codes = synth.trend_codes(12002, k=4)
    trend = []
    for i, code in enumerate(codes):
        arr = synth.make_structured_background(code, 360, 420, seed=12100 + i)
        synth.overlay_caption(arr, trend_caption, pos="top", band_frac=0.12)
        trend.append(arr)
    mt_candidate = trend[0]
    for i, arr in enumerate(trend[1:]):
        images[f"mtrel{i}"] = arr

    images["distractor0"] = synth.make_background(12301)
    images["distractor1"] = synth.make_background(12302)

    items = []
    for item_id, arr in images.items():
        path = os.path.join(outdir, f"{item_id}.png")
        synth.save_png(arr, path)
        items.append(ManifestItem(item_id, path))
    manifest_path = os.path.join(outdir, "corpus.jsonl")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps({"id": item.item_id, "path": item.path}) + "\n")

    index, report = build_index(items)
    index_path = os.path.join(outdir, "corpus.idx")
    save_index(index, index_path)

    synth.save_png(cm_candidate, os.path.join(outdir, "cm_candidate.png"))
    synth.save_png(mt_candidate, os.path.join(outdir, "mt_candidate.png"))
    meta = {
        "cm": {"candidate": "cm_candidate.png", "expected": "CM", "relatives": ["cmrel"]},
        "mt": {
            "candidate": "mt_candidate.png",
            "expected": "MT",
            "relatives": ["mtrel0", "mtrel1", "mtrel2"],
        },
        "index": index_path,
        "manifest": manifest_path,
        "warnings": report.warnings,
    }
    with open(os.path.join(outdir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
    print(f"demo fixtures in {outdir} ({len(items)} indexed items)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main(sys.argv[1] if len(sys.argv) > 1 else "demo"))
