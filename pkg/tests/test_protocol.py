from __future__ import annotations

import pytest

import synth
from memetect import protocol
from memetect.config import Config
from memetect.decompose import CandidateMeme
from memetect.errors import ProviderUnavailableError
from memetect.imaging import RasterImage, dhash64
from memetect.index import LocalIndex, ManifestItem, build_index
from memetect.protocol import (
    CM, FM, MI, MT, NMIT, NMM, TS,
    ProtocolAborted, ProtocolSession, detect_memetic_trend, run,
    step0_modality_check, subtype_template, validate_trace,
)
from memetect.relate import CHOICE_RELATED_DISTINCT, CHOICE_UNRELATED
from memetect.search import LocalSearchProvider, SearchHit


def build_provider(tmp_path, arrays, sub="corpus"):
    d = tmp_path / sub
    d.mkdir(exist_ok=True)
    items = []
    for i, arr in enumerate(arrays):
        p = d / f"im{i:03d}.png"
        synth.save_png(arr, p)
        items.append(ManifestItem(f"im{i:03d}", str(p)))
    index, _ = build_index(items)
    return LocalSearchProvider(index)


def candidate_from(arr):
    return CandidateMeme.prepare(RasterImage.from_array(arr))


def template_pair(seed, text_a="caption alpha", text_b="caption beta"):
    base = synth.make_background(seed)
    a = base.copy()
    synth.overlay_caption(a, text_a, pos="top")
    b = base.copy()
    synth.overlay_caption(b, text_b, pos="top")
    return a, b


def test_empty_index_multimodal_candidate_terminates_nmit(tmp_path):
    arr = synth.make_background(1)
    synth.overlay_caption(arr, "lonely caption", pos="top")
    provider = LocalSearchProvider(LocalIndex([]))
    verdict, trace = run(candidate_from(arr), provider)
    assert verdict.outcome == NMIT
    steps = [r.step for r in trace.records]
    assert steps[0] == 0 and steps[-1] == 8
    assert validate_trace(trace) == []


def test_photo_only_is_nmm_at_step_0(tmp_path):
    provider = LocalSearchProvider(LocalIndex([]))
    verdict, trace = run(candidate_from(synth.make_background(2)), provider)
    assert verdict.outcome == NMM
    assert [r.step for r in trace.records] == [0]


def test_text_only_screenshot_is_nmm(tmp_path):
    arr = synth.text_only_image(
        ["full canvas of text here", "covering every single part",
         "of this plain screenshot", "with more lines of words",
         "and still more text rows", "until the very bottom edge",
         "nothing but letters inside"],
        300, 300,
    )
    provider = LocalSearchProvider(LocalIndex([]))
    verdict, _ = run(candidate_from(arr), provider)
    assert verdict.outcome == NMM


def test_character_macro_fixture(tmp_path):
    a, b = template_pair(40, "caption alpha", "caption omega words")
    provider = build_provider(tmp_path, [b, synth.make_background(900)])
    verdict, trace = run(candidate_from(a), provider)
    assert verdict.outcome == CM
    assert validate_trace(trace) == []


def test_format_macro_fixture(tmp_path):
    cells = [synth.make_background(41, 340, 170), synth.make_background(42, 340, 170)]
    a, _ = synth.stack_segments([c.copy() for c in cells], gutter=10)
    synth.overlay_caption(a, "first words", pos="top", band_frac=0.12)
    b, _ = synth.stack_segments([c.copy() for c in cells], gutter=10)
    synth.overlay_caption(b, "second phrasing", pos="top", band_frac=0.12)
    provider = build_provider(tmp_path, [b])
    verdict, trace = run(candidate_from(a), provider)
    assert verdict.outcome == FM
    assert validate_trace(trace) == []


def test_memetic_image_fixture(tmp_path):
    photo = synth.make_background(50)
    a, _ = synth.append_whitespace_caption(photo.copy(), "first whitespace caption", pos="top")
    b, _ = synth.append_whitespace_caption(photo.copy(), "second unrelated words", pos="top")
    provider = build_provider(tmp_path, [b, synth.make_background(901)])
    verdict, trace = run(candidate_from(a), provider)
    assert verdict.outcome == MI
    assert validate_trace(trace) == []


def test_transferred_symbols_segment_remix(tmp_path):
    shared = synth.make_background(60, 360, 180)
    top_a = synth.make_background(61, 360, 180)
    top_b = synth.make_background(62, 360, 180)
    a, _ = synth.stack_segments([top_a, shared.copy()], gutter=10)
    synth.overlay_caption(a, "alpha words", pos="top", band_frac=0.1)
    b, _ = synth.stack_segments([top_b, shared.copy()], gutter=10)
    synth.overlay_caption(b, "beta phrasing", pos="top", band_frac=0.1)
    provider = build_provider(tmp_path, [b, synth.make_background(902)])
    verdict, trace = run(candidate_from(a), provider)
    assert verdict.outcome == TS
    assert validate_trace(trace) == []


def test_memetic_trend_fixture(tmp_path):
    phrase = "better love story than twilight"
    codes = synth.trend_codes(123, k=4)
    group = []
    for i, code in enumerate(codes):
        arr = synth.make_structured_background(code, seed=i)
        synth.overlay_caption(arr, phrase, pos="top", band_frac=0.18, size=22)
        group.append(arr)
    provider = build_provider(tmp_path, group[1:] + [synth.make_background(903)])
    verdict, trace = run(candidate_from(group[0]), provider)
    assert verdict.outcome == MT
    assert validate_trace(trace) == []


def test_viral_duplicates_flagged(tmp_path):
    arr = synth.make_background(70)
    synth.overlay_caption(arr, "one of a kind viral", pos="top")
    provider = build_provider(tmp_path, [arr.copy(), arr.copy(), synth.make_background(904)])
    verdict, trace = run(candidate_from(arr), provider)
    assert verdict.outcome == NMIT
    assert verdict.viral_flag is True


def test_nonmeme_unique_caption_not_viral(tmp_path):
    arr = synth.make_background(71)
    synth.overlay_caption(arr, "nothing like me exists", pos="top")
    provider = build_provider(tmp_path, [synth.make_background(905), synth.make_background(906)])
    verdict, _ = run(candidate_from(arr), provider)
    assert verdict.outcome == NMIT
    assert verdict.viral_flag is False


def test_monotone_memeticity_single_relative_flips_verdict(tmp_path):
    a, b = template_pair(80, "caption here", "other caption words")
    empty_provider = build_provider(tmp_path, [synth.make_background(907)], sub="i0")
    candidate = candidate_from(a)
    verdict0, _ = run(candidate, empty_provider)
    assert verdict0.outcome == NMIT
    provider = build_provider(tmp_path, [synth.make_background(907), b], sub="i1")
    verdict1, _ = run(candidate, provider)
    assert verdict1.outcome == CM


def test_step0_modality_check_api():
    photo = candidate_from(synth.make_background(90))
    assert step0_modality_check(photo) is False
    capped = synth.make_background(91)
    synth.overlay_caption(capped, "has words", pos="top")
    assert step0_modality_check(candidate_from(capped)) is True


def test_subtype_template_rules():
    from memetect.decompose import LayoutKind, PanelLayout

    assert subtype_template(PanelLayout(LayoutKind.SINGLE_CHARACTER_CAPTION)) == CM
    assert subtype_template(PanelLayout(LayoutKind.OTHER)) == FM
    assert (
        subtype_template(PanelLayout(LayoutKind.MULTI_SEGMENT, ((0, 0, 1, 1), (1, 1, 2, 2))))
        == FM
    )


def test_detect_memetic_trend_rules():
    cfg = Config()
    base_hash = 0
    far = 0xFFFFFFFF00000000  # 32 bits away from 0
    near = 0x1  # 1 bit away

    def hit(hid, text, h):
        return SearchHit(hit_id=hid, visual_distance=1.0, text=text, dhash64=h)

    caption = "better love story than twilight"
    dissimilar = [
        hit("a", caption, far),
        hit("b", caption, 0x00000000FFFFFFFF),
        hit("c", caption, 0xF0F0F0F0F0F0F0F0),
    ]
    assert detect_memetic_trend(caption, dissimilar, base_hash, cfg) is True
    assert detect_memetic_trend(caption, dissimilar[:1], base_hash, cfg) is False
    same_background = [hit(x, caption, near) for x in "abc"]
    assert detect_memetic_trend(caption, same_background, base_hash, cfg) is False
    assert detect_memetic_trend("", dissimilar, base_hash, cfg) is False


def test_protocol_runs_with_external_provider(tmp_path):
    # provider substitutability: a valid verdict and trace with the external
    # client too; empty results everywhere terminate at step 8
    from memetect.search import ExternalSearchClient

    def fetch(url, request, timeout):
        return {"hits": []}

    client = ExternalSearchClient("https://search.example/api", rate_limit=0, fetch=fetch)
    arr = synth.make_background(94)
    synth.overlay_caption(arr, "external provider words", pos="top")
    verdict, trace = run(candidate_from(arr), client)
    assert verdict.outcome == NMIT
    assert validate_trace(trace) == []
    assert trace.provider.startswith("external:")


def test_provider_failure_aborts_with_trace(tmp_path):
    class FailingProvider:
        identity = "failing"
        supports_image = True
        supports_text = True

        def image_search(self, image, n):
            raise ProviderUnavailableError("quota")

        def text_search(self, query, n):
            raise ProviderUnavailableError("quota")

    arr = synth.make_background(95)
    synth.overlay_caption(arr, "caption words", pos="top")
    with pytest.raises(ProtocolAborted) as err:
        run(candidate_from(arr), FailingProvider())
    trace = err.value.trace
    assert trace.status == "aborted"
    assert trace.records and trace.records[-1].decision.startswith("advance:")


def test_replay_from_config_snapshot(tmp_path):
    a, b = template_pair(96, "caption one", "caption two words")
    provider = build_provider(tmp_path, [b])
    candidate = candidate_from(a)
    verdict1, trace1 = run(candidate, provider)
    snapshot = trace1.config_snapshot
    cfg = Config()
    for key, value in snapshot.items():
        if key == "search.api_key":
            continue
        cfg.set_dotted(key, value)
    verdict2, trace2 = run(candidate_from(a), provider, config=cfg)
    assert verdict1.outcome == verdict2.outcome
    assert [r.decision for r in trace1.records] == [r.decision for r in trace2.records]


def test_interactive_session_pauses_and_accepts_judgements(tmp_path):
    a, b = template_pair(97, "caption uno", "caption dos words")
    provider = build_provider(tmp_path, [b, synth.make_background(908)])
    session = ProtocolSession(
        candidate_from(a), provider, mode=protocol.MODE_INTERACTIVE
    )
    status = session.advance()
    assert status == protocol.AWAITING_JUDGEMENT
    assert session.pending_step() == 1
    hits = session.pending_hits()
    assert hits
    relative = next(h for h in hits if h.hit_id == "im000")
    status = session.submit_judgement(relative.hit_id, CHOICE_RELATED_DISTINCT)
    assert status == protocol.COMPLETED
    assert session.verdict.outcome == CM
    assert session.verdict.decided_by == "human"


def test_interactive_reject_all_advances_per_graph(tmp_path):
    a, b = template_pair(98, "caption x", "caption y words")
    provider = build_provider(tmp_path, [b], sub="c2")
    session = ProtocolSession(
        candidate_from(a), provider, mode=protocol.MODE_INTERACTIVE
    )
    session.advance()
    guard = 0
    while session.status == protocol.AWAITING_JUDGEMENT and guard < 500:
        hit = session.pending_hits()[0]
        session.submit_judgement(hit.hit_id, CHOICE_UNRELATED)
        guard += 1
    assert session.status == protocol.COMPLETED
    assert session.verdict.outcome == NMIT
    assert validate_trace(session.trace) == []
