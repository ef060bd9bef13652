"""LLM expression enhancement client.

Builds dual-task prompts with guide images, calls an OpenAI-compatible chat
endpoint with retries and a content-addressed disk cache, validates the
responses, exports distillation pairs, and estimates request costs.
"""

import base64
import hashlib
import json
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import cv2
import numpy as np
import requests

from .targets import Target
from .tiling import Tile

INSTRUCTION_VERSION = "enhance_v1"

RETRY_BASE_DELAY = 1.0
RETRY_MAX_TRIES = 5

CROP_EXPANSION = 1.5
BOX_THICKNESS = 3
OVERLAY_ALPHA = 0.4
RED = (255, 0, 0)

# Responses that leak the guide apparatus into the expression are rejected.
FORBIDDEN_SUBSTRINGS = ("bounding box", "red box", "highlighted", "marked")


@dataclass
class EndpointConfig:
    url: str
    model: str
    api_key: str = ""
    timeout: float = 120.0

    @classmethod
    def from_env(cls):
        return cls(
            url=os.environ.get("ENHANCER_URL", ""),
            model=os.environ.get("ENHANCER_MODEL", ""),
            api_key=os.environ.get("ENHANCER_KEY", ""),
        )


@dataclass
class PromptPayload:
    target_id: str
    task1_inputs: list  # rule expression texts
    guide_images: list  # list of RGB arrays, annotated first
    instruction_id: str = INSTRUCTION_VERSION


@dataclass
class EnhancementResult:
    target_id: str
    language_variations: list = field(default_factory=list)
    visual_variations: list = field(default_factory=list)
    raw_response: dict = None
    valid_language: list = field(default_factory=list)
    valid_visual: list = field(default_factory=list)
    failed: bool = False


@dataclass
class CostModel:
    input_price_per_m: float
    output_price_per_m: float
    avg_input_tokens: float
    avg_output_tokens: float

    def __post_init__(self):
        for v in (self.input_price_per_m, self.output_price_per_m,
                  self.avg_input_tokens, self.avg_output_tokens):
            if v < 0:
                raise ValueError("cost model values must be non-negative")


def estimate_cost(n_requests: int, model: CostModel) -> float:
    """Dollar cost: n * (in_tokens * in_price + out_tokens * out_price) / 1e6."""
    if n_requests < 0:
        raise ValueError("n_requests must be non-negative")
    per_request = (
        model.avg_input_tokens * model.input_price_per_m
        + model.avg_output_tokens * model.output_price_per_m
    ) / 1e6
    return n_requests * per_request


def render_guides(tile: Tile, target: Target) -> list:
    """Guide image pair for one target.

    Instances and clusters get a red-box-annotated full tile plus a close-up
    crop of the bbox expanded 1.5x; semantic targets get a red mask overlay
    plus the clean tile.
    """
    if target.mask.sum() == 0:
        raise ValueError("cannot render guides for an empty mask")
    h, w = tile.pixels.shape[:2]
    if target.kind in ("instance", "cluster", "class_group"):
        annotated = tile.pixels.copy()
        x0, y0, x1, y1 = target.bbox
        cv2.rectangle(annotated, (x0, y0), (x1, y1), RED, BOX_THICKNESS)
        cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
        half_w = (x1 - x0 + 1) * CROP_EXPANSION / 2.0
        half_h = (y1 - y0 + 1) * CROP_EXPANSION / 2.0
        cx0 = max(0, int(round(cx - half_w)))
        cy0 = max(0, int(round(cy - half_h)))
        cx1 = min(w, int(round(cx + half_w)))
        cy1 = min(h, int(round(cy + half_h)))
        crop = tile.pixels[cy0:cy1, cx0:cx1].copy()
        return [annotated, crop]
    overlay = tile.pixels.astype(np.float32).copy()
    sel = target.mask.astype(bool)
    overlay[sel] = (1 - OVERLAY_ALPHA) * overlay[sel] + OVERLAY_ALPHA * np.array(RED, np.float32)
    return [overlay.astype(np.uint8), tile.pixels.copy()]


def load_instructions(instruction_id: str = INSTRUCTION_VERSION) -> str:
    path = resources.files("aerialforge.data").joinpath(f"prompts/{instruction_id}.txt")
    return path.read_text()


def _encode_image(img: np.ndarray) -> str:
    ok, buf = cv2.imencode(".png", cv2.cvtColor(img, cv2.COLOR_RGB2BGR))
    if not ok:
        raise RuntimeError("PNG encoding failed")
    return base64.b64encode(buf.tobytes()).decode()


def build_request(payload: PromptPayload, model: str) -> dict:
    """OpenAI-style chat completion request with base64-embedded images."""
    instructions = load_instructions(payload.instruction_id)
    user_text = instructions + "\n\nOriginal expressions:\n" + "\n".join(
        f"{i + 1}. {text}" for i, text in enumerate(payload.task1_inputs)
    )
    content = [{"type": "text", "text": user_text}]
    for img in payload.guide_images:
        content.append(
            {
                "type": "image_url",
                "image_url": {"url": "data:image/png;base64," + _encode_image(img)},
            }
        )
    return {
        "model": model,
        "messages": [{"role": "user", "content": content}],
        "response_format": {"type": "json_object"},
    }


def cache_key(payload: PromptPayload, model: str) -> str:
    """Content hash over prompt inputs, guide image bytes, instruction version
    and model id. Changing the instructions invalidates the cache by design."""
    h = hashlib.sha256()
    h.update(model.encode())
    h.update(payload.instruction_id.encode())
    h.update(payload.target_id.encode())
    for text in payload.task1_inputs:
        h.update(b"\x00" + text.encode())
    for img in payload.guide_images:
        h.update(np.ascontiguousarray(img).tobytes())
        h.update(str(img.shape).encode())
    return h.hexdigest()


class EnhancerClient:
    """Batched enhancement with caching, retries, and response validation."""

    def __init__(self, config: EndpointConfig, cache_dir: str, concurrency: int = 4):
        self.config = config
        self.cache_dir = cache_dir
        self.concurrency = concurrency
        self.request_count = 0
        os.makedirs(cache_dir, exist_ok=True)

    def _cache_path(self, key: str) -> str:
        return os.path.join(self.cache_dir, key + ".json")

    def _cache_read(self, key: str) -> Optional[dict]:
        path = self._cache_path(key)
        if not os.path.exists(path):
            return None
        with open(path) as f:
            return json.load(f)

    def _cache_write(self, key: str, value: dict):
        path = self._cache_path(key)
        tmp = path + f".tmp{os.getpid()}"
        with open(tmp, "w") as f:
            json.dump(value, f)
        os.replace(tmp, path)

    def _post_with_retries(self, body: dict) -> dict:
        delay = RETRY_BASE_DELAY
        last_error = None
        for attempt in range(RETRY_MAX_TRIES):
            try:
                self.request_count += 1
                headers = {"Content-Type": "application/json"}
                if self.config.api_key:
                    headers["Authorization"] = f"Bearer {self.config.api_key}"
                resp = requests.post(
                    self.config.url, json=body, headers=headers,
                    timeout=self.config.timeout,
                )
                if resp.status_code in (429, 500, 502, 503, 504):
                    last_error = RuntimeError(f"HTTP {resp.status_code}")
                elif resp.status_code != 200:
                    raise RuntimeError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    return resp.json()
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = exc
            if attempt < RETRY_MAX_TRIES - 1:
                time.sleep(delay)
                delay *= 2
        raise last_error

    def enhance(self, payload: PromptPayload) -> EnhancementResult:
        """One target's dual-task enhancement; cache hits issue no requests.

        Permanent failures return a result flagged failed; rule expressions
        are untouched either way.
        """
        key = cache_key(payload, self.config.model)
        raw = self._cache_read(key)
        if raw is None:
            body = build_request(payload, self.config.model)
            try:
                raw = self._post_with_retries(body)
            except Exception:
                return EnhancementResult(target_id=payload.target_id, failed=True)
            self._cache_write(key, raw)
        return parse_response(payload, raw)

    def enhance_batch(self, payloads: list) -> list:
        """Concurrent fan-out; results merged deterministically by target id."""
        with ThreadPoolExecutor(max_workers=self.concurrency) as pool:
            results = list(pool.map(self.enhance, payloads))
        return sorted(results, key=lambda r: r.target_id)


def parse_response(payload: PromptPayload, raw: dict) -> EnhancementResult:
    """Extract the dual-task JSON from a chat completion; schema-invalid
    responses yield a failed result."""
    result = EnhancementResult(target_id=payload.target_id, raw_response=raw)
    try:
        content = raw["choices"][0]["message"]["content"]
        parsed = json.loads(content) if isinstance(content, str) else content
        language = parsed["language_variations"]
        visual = parsed["visual_variations"]
        if not isinstance(language, list) or not isinstance(visual, list):
            raise ValueError("variations must be lists")
        if len(language) != len(payload.task1_inputs):
            raise ValueError("language variations not aligned with inputs")
        if len(visual) != 2 or visual[0] == visual[1]:
            raise ValueError("expected exactly 2 distinct visual variations")
        result.language_variations = [str(s) for s in language]
        result.visual_variations = [str(s) for s in visual]
    except (KeyError, IndexError, TypeError, ValueError, json.JSONDecodeError):
        result.failed = True
    return result


def validate_enhancement(result: EnhancementResult, existing_texts: set) -> EnhancementResult:
    """Drop empty items, duplicates of existing image expressions, and items
    that mention the guide apparatus. Rejected items are not regenerated."""
    def ok(text, seen):
        stripped = text.strip()
        if not stripped:
            return False
        low = stripped.lower()
        if any(sub in low for sub in FORBIDDEN_SUBSTRINGS):
            return False
        if low in seen:
            return False
        return True

    seen = {t.strip().lower() for t in existing_texts}
    for text in result.language_variations:
        if ok(text, seen):
            result.valid_language.append(text.strip())
            seen.add(text.strip().lower())
    for text in result.visual_variations:
        if ok(text, seen):
            result.valid_visual.append(text.strip())
            seen.add(text.strip().lower())
    return result


def export_distillation_pairs(
    records: list, out_path: str, k: int = 500, seed: int = 0
) -> int:
    """Write k (prompt, response) chat pairs as JSON lines for fine-tuning.

    ``records`` are (payload, result) pairs from validated teacher runs;
    sampling is seeded and uniform.
    """
    usable = [(p, r) for p, r in records if not r.failed]
    if len(usable) < k:
        raise ValueError(
            f"need {k} valid teacher results, have {len(usable)} "
            f"(short by {k - len(usable)})"
        )
    rng = random.Random(seed)
    sample = sorted(rng.sample(range(len(usable)), k))
    with open(out_path, "w") as f:
        for idx in sample:
            payload, result = usable[idx]
            record = {
                "messages": [
                    {
                        "role": "user",
                        "content": load_instructions(payload.instruction_id)
                        + "\n\nOriginal expressions:\n"
                        + "\n".join(
                            f"{i + 1}. {t}" for i, t in enumerate(payload.task1_inputs)
                        ),
                    },
                    {
                        "role": "assistant",
                        "content": json.dumps(
                            {
                                "language_variations": result.language_variations,
                                "visual_variations": result.visual_variations,
                            }
                        ),
                    },
                ],
                "target_id": payload.target_id,
            }
            f.write(json.dumps(record, sort_keys=True) + "\n")
    return k
