from __future__ import annotations

import numpy as np
import pytest

import synth
from memetect import decompose
from memetect.decompose import LayoutKind, ViewKind
from memetect.errors import BackendMissingError, ContractViolationError, NothingLeftAfterCropError
from memetect.imaging import RasterImage
from memetect.ocr import box_iou, get_backend


def img(arr: np.ndarray) -> RasterImage:
    return RasterImage.from_array(arr)


def test_uniform_image_has_no_text_regions():
    gray = np.full((400, 400, 3), 128, dtype=np.uint8)
    assert decompose.detect_text_regions(img(gray)) == []


def test_rendered_caption_detected_with_bbox_and_text():
    arr = np.full((400, 400, 3), 128, dtype=np.uint8)
    ink = synth.draw_text(arr, "TOP TEXT", 24, 12, 42, (255, 255, 255))
    regions = decompose.detect_text_regions(img(arr))
    assert len(regions) == 1
    region = regions[0]
    assert box_iou(region.bbox, ink) >= 0.6
    assert region.text.lower() == "top text"
    assert region.confidence >= 0.5


def test_two_caption_fixture_yields_two_ordered_regions():
    arr = synth.make_background(3)
    synth.overlay_caption(arr, "better love story", pos="top")
    synth.overlay_caption(arr, "than twilight", pos="bottom")
    regions = decompose.detect_text_regions(img(arr))
    assert len(regions) == 2
    assert regions[0].bbox[1] < regions[1].bbox[1]
    assert box_iou(regions[0].bbox, regions[1].bbox) < 0.2


def test_unknown_backend_raises_distinct_error():
    with pytest.raises(BackendMissingError):
        decompose.detect_text_regions(img(synth.make_background(1)), backend="tesseract")


def test_layout_single_character_caption():
    arr = synth.make_background(11)
    synth.overlay_caption(arr, "stereotypical caption", pos="top")
    image = img(arr)
    regions = decompose.detect_text_regions(image)
    layout = decompose.classify_layout(image, regions)
    assert layout.kind == LayoutKind.SINGLE_CHARACTER_CAPTION


def test_layout_multi_segment_with_evidence():
    panels = [synth.make_background(21), synth.make_background(22)]
    arr, boxes = synth.stack_segments(panels, gutter=10)
    image = img(arr)
    regions = decompose.detect_text_regions(image)
    layout = decompose.classify_layout(image, regions)
    assert layout.kind == LayoutKind.MULTI_SEGMENT
    assert len(layout.evidence) == 2


def test_layout_image_plus_whitespace():
    photo = synth.make_background(31)
    arr, info = synth.append_whitespace_caption(photo, "caption words", pos="top", band_frac=0.25)
    image = img(arr)
    regions = decompose.detect_text_regions(image)
    layout = decompose.classify_layout(image, regions)
    assert layout.kind == LayoutKind.IMAGE_PLUS_WHITESPACE
    band = layout.evidence[0]
    assert band[1] == 0 and band[3] >= int(0.1 * image.height)


def test_layout_whitespace_band_property():
    # ImagePlusWhitespace only when a >=10%-height, >=95%-white band exists
    photo = synth.make_background(32)
    arr, _ = synth.append_whitespace_caption(photo, "zz", pos="top", band_frac=0.04)
    image = img(arr)
    regions = decompose.detect_text_regions(image)
    layout = decompose.classify_layout(image, regions)
    assert layout.kind != LayoutKind.IMAGE_PLUS_WHITESPACE


def test_crop_remove_text_identity_without_regions():
    image = img(synth.make_background(41))
    view = decompose.crop_remove_text(image, [])
    assert view.kind == ViewKind.TEXT_REMOVED
    assert view.image.content_digest == image.content_digest


def test_crop_remove_text_returns_background_below_band():
    photo = synth.make_background(42, 360, 300)
    arr = photo.copy()
    info = synth.overlay_caption(arr, "remove me", pos="top", band_frac=0.2)
    image = img(arr)
    regions = decompose.detect_text_regions(image)
    view = decompose.crop_remove_text(image, regions)
    band_bottom = info["band"][3]
    expected = photo[band_bottom:, :]
    np.testing.assert_array_equal(view.image.pixels[:, :, :3], expected)


def test_crop_remove_text_full_canvas_text_errors():
    arr = synth.text_only_image(["all text here", "covers canvas", "entirely now", "no image left"], 240, 240)
    image = img(arr)
    # synthesize wall-to-wall regions: the error path keys on coverage
    regions = [decompose.TextRegion((0, 0, 240, 240), "all text", 0.9)]
    with pytest.raises(NothingLeftAfterCropError):
        decompose.crop_remove_text(image, regions)


def test_split_segments_two_panel_matches_construction():
    panels = [synth.make_background(51), synth.make_background(52)]
    arr, boxes = synth.stack_segments(panels, gutter=12)
    image = img(arr)
    views = decompose.split_segments(image)
    assert len(views) == 2
    for view, built in zip(views, boxes):
        got = view.source_boxes[0]
        assert all(abs(g - b) <= 3 for g, b in zip(got, built))


def test_split_segments_grid_row_major():
    grid, boxes = synth.grid_segments(
        [[synth.make_background(61, 170, 170), synth.make_background(62, 170, 170)],
         [synth.make_background(63, 170, 170), synth.make_background(64, 170, 170)]],
        gutter=10,
    )
    image = img(grid)
    views = decompose.split_segments(image)
    assert len(views) == 4
    ys = [v.source_boxes[0][1] for v in views]
    xs = [v.source_boxes[0][0] for v in views]
    assert ys[0] == ys[1] < ys[2] == ys[3]
    assert xs[0] < xs[1] and xs[2] < xs[3]


def test_split_segments_single_photo_is_contract_violation():
    image = img(synth.make_background(71))
    with pytest.raises(ContractViolationError):
        decompose.split_segments(image)


def test_crop_remove_whitespace_top_band():
    photo = synth.make_background(81)
    arr, info = synth.append_whitespace_caption(photo, "caption here", pos="top")
    image = img(arr)
    regions = decompose.detect_text_regions(image)
    view = decompose.crop_remove_whitespace(image, regions)
    np.testing.assert_array_equal(view.image.pixels[:, :, :3], photo)


def test_crop_remove_whitespace_bottom_band():
    photo = synth.make_background(82)
    arr, info = synth.append_whitespace_caption(photo, "caption here", pos="bottom")
    image = img(arr)
    regions = decompose.detect_text_regions(image)
    view = decompose.crop_remove_whitespace(image, regions)
    np.testing.assert_array_equal(view.image.pixels[:, :, :3], photo)


def test_crop_remove_whitespace_without_band_errors():
    image = img(synth.make_background(83))
    with pytest.raises(ContractViolationError):
        decompose.crop_remove_whitespace(image, [])


def test_superimposed_element_found_first():
    base = synth.make_background(91)
    elem = synth.make_element(5)
    pasted = synth.paste_element(base, elem, 120, 140)
    views = decompose.extract_superimposed_elements(img(base))
    assert views, "expected at least one element proposal"
    assert box_iou(views[0].source_boxes[0], pasted) >= 0.5


def test_superimposed_elements_tolerates_plain_photo():
    views = decompose.extract_superimposed_elements(img(synth.make_background(92)))
    assert len(views) <= 8  # may be empty; downstream tolerates that


def test_two_pasted_elements_both_returned():
    base = synth.make_background(93)
    a = synth.paste_element(base, synth.make_element(6, 100, 100), 30, 40)
    b = synth.paste_element(base, synth.make_element(7, 100, 100), 220, 210)
    views = decompose.extract_superimposed_elements(img(base))
    found_a = any(box_iou(v.source_boxes[0], a) >= 0.5 for v in views)
    found_b = any(box_iou(v.source_boxes[0], b) >= 0.5 for v in views)
    assert found_a and found_b


def test_extract_text_empty():
    image = img(synth.make_background(94))
    view = decompose.extract_text(image, [])
    assert view.text == ""


def test_extract_text_reading_order_and_normalization():
    arr = synth.make_background(95)
    synth.overlay_caption(arr, "better love story", pos="top")
    synth.overlay_caption(arr, "than twilight", pos="bottom")
    image = img(arr)
    regions = decompose.detect_text_regions(image)
    view = decompose.extract_text(image, regions)
    assert view.text == "better love story than twilight"


def test_extract_text_lowercases():
    arr = np.full((200, 400, 3), 230, dtype=np.uint8)
    synth.draw_text(arr, "MiXeD CaSe", 40, 70, 40, (10, 10, 10))
    image = img(arr)
    regions = decompose.detect_text_regions(image)
    view = decompose.extract_text(image, regions)
    assert view.text == view.text.lower()
    assert "mixed case" == view.text


def test_views_contained_and_deterministic():
    arr = synth.make_background(96)
    synth.overlay_caption(arr, "containment check", pos="top")
    image = img(arr)
    regions = decompose.detect_text_regions(image)
    view1 = decompose.crop_remove_text(image, regions)
    view2 = decompose.crop_remove_text(image, regions)
    assert view1.image.content_digest == view2.image.content_digest
    box = view1.source_boxes[0]
    assert 0 <= box[0] <= box[2] <= image.width
    assert 0 <= box[1] <= box[3] <= image.height
