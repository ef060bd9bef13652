import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from aerialforge.enhancer import (
    CostModel, EndpointConfig, EnhancerClient, EnhancementResult,
    PromptPayload, build_request, cache_key, estimate_cost,
    export_distillation_pairs, parse_response, render_guides,
    validate_enhancement,
)
from aerialforge.targets import Target
from aerialforge.tiling import Tile

from mockserver import MockEnhancerServer, chat_response


def make_tile():
    return Tile(id="tile0", source_id="s", origin=(0, 0),
                pixels=np.full((480, 480, 3), 90, np.uint8))


def make_target(kind="instance", bbox=(230, 230, 249, 249)):
    mask = np.zeros((480, 480), np.uint8)
    x0, y0, x1, y1 = bbox
    mask[y0 : y1 + 1, x0 : x1 + 1] = 1
    return Target(id="tgt0", kind=kind, category="plane", mask=mask, bbox=bbox)


@pytest.fixture
def payload():
    tile = make_tile()
    target = make_target()
    return PromptPayload(
        target_id="tgt0",
        task1_inputs=["the plane in the center", "the light plane in the center"],
        guide_images=render_guides(tile, target),
    )


# ------------------------------------------------------------------- guides

def test_guides_instance_box_and_crop():
    tile = make_tile()
    target = make_target(bbox=(230, 230, 249, 249))  # 20x20 at the center
    annotated, crop = render_guides(tile, target)
    assert annotated.shape == (480, 480, 3)
    # red outline present, interior beyond the 3px outline untouched
    assert tuple(annotated[230, 230]) == (255, 0, 0)
    assert tuple(annotated[240, 240]) == (90, 90, 90)
    # 1.5x expansion of a 20px box -> 30x30 crop
    assert crop.shape[:2] == (30, 30)


def test_guides_crop_clamped_at_corner():
    tile = make_tile()
    target = make_target(bbox=(0, 0, 19, 19))
    _, crop = render_guides(tile, target)
    assert crop.shape[0] <= 480 and crop.shape[1] <= 480
    assert crop.shape[0] < 30 and crop.shape[1] < 30  # clamped at (0,0)


def test_guides_semantic_overlay():
    tile = make_tile()
    mask = np.zeros((480, 480), np.uint8)
    mask[:100, :100] = 1
    target = Target(id="t", kind="semantic_region", category="forest",
                    mask=mask, bbox=(0, 0, 99, 99))
    overlay, clean = render_guides(tile, target)
    assert np.array_equal(clean, tile.pixels)
    # overlay changes exactly the mask pixels
    changed = np.any(overlay != tile.pixels, axis=2)
    assert np.array_equal(changed, mask.astype(bool))
    expected = 0.6 * 90 + 0.4 * 255
    assert overlay[0, 0, 0] == int(expected)


def test_guides_empty_mask_rejected():
    target = make_target()
    target.mask = np.zeros((480, 480), np.uint8)
    with pytest.raises(ValueError):
        render_guides(make_tile(), target)


# ------------------------------------------------------------ parse/validate

def test_parse_valid_response(payload):
    raw = chat_response(["a", "b"], ["c", "d"])
    result = parse_response(payload, raw)
    assert not result.failed
    assert result.language_variations == ["a", "b"]
    assert result.visual_variations == ["c", "d"]


def test_parse_wrong_visual_count(payload):
    assert parse_response(payload, chat_response(["a", "b"], ["c", "d", "e"])).failed
    assert parse_response(payload, chat_response(["a", "b"], ["c"])).failed
    assert parse_response(payload, chat_response(["a", "b"], ["c", "c"])).failed


def test_parse_misaligned_language(payload):
    assert parse_response(payload, chat_response(["only one"], ["c", "d"])).failed


def test_parse_garbage(payload):
    assert parse_response(payload, {"choices": []}).failed
    assert parse_response(payload, {"choices": [{"message": {"content": "not json"}}]}).failed


def test_validate_forbidden_substrings():
    result = EnhancementResult(
        target_id="t",
        language_variations=["the plane inside the red box", "the silver aircraft"],
        visual_variations=["the plane next to the highlighted area",
                           "the plane beside the hangar"],
    )
    validate_enhancement(result, set())
    assert result.valid_language == ["the silver aircraft"]
    assert result.valid_visual == ["the plane beside the hangar"]


def test_validate_duplicates_and_empties():
    result = EnhancementResult(
        target_id="t",
        language_variations=["the plane in the center", "  ", "fresh wording"],
        visual_variations=["fresh wording", "another view"],
    )
    validate_enhancement(result, {"the plane in the center"})
    assert result.valid_language == ["fresh wording"]
    assert result.valid_visual == ["another view"]  # first visual dupes language


def test_validate_example_from_enhanced_cluster():
    result = EnhancementResult(
        target_id="t",
        language_variations=["the cluster of four big vehicles at the upper-middle region"],
        visual_variations=["x", "y"],
    )
    validate_enhancement(result, set())
    assert result.valid_language == [
        "the cluster of four big vehicles at the upper-middle region"
    ]


# ------------------------------------------------------------------- client

def test_client_round_trip_and_cache(tmp_path, payload):
    server = MockEnhancerServer(lambda body, n: (200, chat_response(["a", "b"], ["c", "d"])))
    try:
        config = EndpointConfig(url=server.url, model="mock-model")
        client = EnhancerClient(config, str(tmp_path / "cache"))
        result = client.enhance(payload)
        assert not result.failed
        assert result.language_variations == ["a", "b"]
        assert len(server.requests) == 1
        # request carries prompt text and both guide images
        sent = server.requests[0]
        content = sent["messages"][0]["content"]
        assert sum(1 for c in content if c["type"] == "image_url") == 2
        assert "the plane in the center" in content[0]["text"]

        # cache hit: zero further network calls, identical result
        again = client.enhance(payload)
        assert len(server.requests) == 1
        assert again.language_variations == result.language_variations
    finally:
        server.stop()


def test_client_retries_transient_errors(tmp_path, payload, monkeypatch):
    monkeypatch.setattr("aerialforge.enhancer.RETRY_BASE_DELAY", 0.01)
    server = MockEnhancerServer(
        lambda body, n: (503, {}) if n < 3 else (200, chat_response(["a", "b"], ["c", "d"]))
    )
    try:
        client = EnhancerClient(EndpointConfig(server.url, "m"), str(tmp_path / "c"))
        result = client.enhance(payload)
        assert not result.failed
        assert len(server.requests) == 3
    finally:
        server.stop()


def test_client_permanent_failure_marks_failed(tmp_path, payload, monkeypatch):
    monkeypatch.setattr("aerialforge.enhancer.RETRY_BASE_DELAY", 0.001)
    server = MockEnhancerServer(lambda body, n: (503, {}))
    try:
        client = EnhancerClient(EndpointConfig(server.url, "m"), str(tmp_path / "c"))
        result = client.enhance(payload)
        assert result.failed
        assert len(server.requests) == 5  # max tries
    finally:
        server.stop()


def test_cache_key_sensitivity(payload):
    base = cache_key(payload, "model-a")
    assert base == cache_key(payload, "model-a")
    assert base != cache_key(payload, "model-b")
    other = PromptPayload(
        target_id=payload.target_id,
        task1_inputs=payload.task1_inputs + ["extra"],
        guide_images=payload.guide_images,
    )
    assert base != cache_key(other, "model-a")


# ------------------------------------------------------------- distillation

def test_export_distillation_pairs(tmp_path, payload):
    records = []
    for i in range(600):
        p = PromptPayload(target_id=f"t{i:04d}", task1_inputs=["x"],
                          guide_images=[np.zeros((2, 2, 3), np.uint8)])
        r = EnhancementResult(target_id=p.target_id,
                              language_variations=["v"], visual_variations=["a", "b"])
        records.append((p, r))
    out = tmp_path / "pairs.jsonl"
    n = export_distillation_pairs(records, str(out), k=500, seed=3)
    assert n == 500
    lines = out.read_text().splitlines()
    assert len(lines) == 500
    for line in lines:
        rec = json.loads(line)
        assert rec["messages"][0]["role"] == "user"
        assert rec["messages"][1]["role"] == "assistant"

    out2 = tmp_path / "pairs2.jsonl"
    export_distillation_pairs(records, str(out2), k=500, seed=3)
    assert out.read_bytes() == out2.read_bytes()


def test_export_distillation_shortfall(tmp_path):
    records = [(PromptPayload("t", ["x"], [np.zeros((2, 2, 3), np.uint8)]),
                EnhancementResult(target_id="t", failed=True))]
    with pytest.raises(ValueError, match="short"):
        export_distillation_pairs(records, str(tmp_path / "p.jsonl"), k=500)


def test_export_distillation_zero(tmp_path):
    out = tmp_path / "empty.jsonl"
    assert export_distillation_pairs([], str(out), k=0) == 0
    assert out.read_text() == ""


# -------------------------------------------------------------------- costs

O3 = CostModel(2.00, 8.00, 1670.8, 2173.3)
DISTILLED = CostModel(0.035, 0.141, 1330.0, 284.7)


def test_cost_o3_table_value():
    cost = estimate_cost(259_709, O3)
    assert cost == pytest.approx(5382.98, rel=1e-3)


def test_cost_distilled_table_value():
    cost = estimate_cost(259_709, DISTILLED)
    assert cost == pytest.approx(22.80, rel=1.5e-2)


def test_cost_ratio_238x():
    ratio = estimate_cost(259_709, O3) / estimate_cost(259_709, DISTILLED)
    assert 230 <= ratio <= 246


def test_cost_zero_requests():
    assert estimate_cost(0, O3) == 0.0


def test_cost_model_rejects_negative():
    with pytest.raises(ValueError):
        CostModel(-1, 8, 100, 100)
    with pytest.raises(ValueError):
        estimate_cost(-1, O3)
