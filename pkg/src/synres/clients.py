"""Clients for the four model services, plus a deterministic mock suite.

Production clients speak HTTP POST with JSON bodies (see docs/wire.md). The
mocks implement the same interfaces as pure functions of their inputs, so
pipeline runs without any model server are bit-reproducible.
"""

from __future__ import annotations

import base64
import io
import os
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import requests
from PIL import Image

from .core import (
    BinaryMask,
    DataError,
    DimensionMismatch,
    EmptyInput,
    ImageStore,
    RasterMask,
    SynresError,
    fnv1a_64,
    rle_encode,
)

ATTRIBUTE_CATEGORIES = (
    "head noun",
    "sub noun",
    "color",
    "size",
    "absolute location relation",
    "relative location relation",
    "action",
    "generic attribute",
)
ATTRIBUTE_IDS = tuple(f"A{k}" for k in range(1, 9))


class ClientError(SynresError):
    """A model service call failed; carries which stage was talking."""

    def __init__(self, stage: str, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


class EmptyResponse(ClientError):
    """The service answered but returned no usable payload."""


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    backoff: float = 0.2

    def __post_init__(self):
        if self.attempts < 1:
            raise DataError("retry attempts must be at least 1")


@dataclass(frozen=True)
class ClientEndpointConfig:
    base_url: str
    timeout: float = 30.0
    max_in_flight: int = 4
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    auth_token: str | None = None

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise DataError("max_in_flight must be at least 1")


def encode_image_b64(pixels: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8), mode="RGB").save(
        buf, format="PNG"
    )
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_image_b64(data: str) -> np.ndarray:
    with Image.open(io.BytesIO(base64.b64decode(data))) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def decode_floats_b64(data: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(data), dtype="<f4").astype(np.float64)


class HttpEndpoint:
    """One service endpoint with retries, a timeout, and an in-flight bound."""

    def __init__(self, stage: str, config: ClientEndpointConfig):
        self.stage = stage
        self.config = config
        self._gate = threading.BoundedSemaphore(config.max_in_flight)
        self._session = requests.Session()

    def post(self, path: str, payload: dict) -> dict:
        url = self.config.base_url.rstrip("/") + path
        headers = {}
        token = os.environ.get("SYNRES_AUTH_TOKEN") or self.config.auth_token
        if token:
            headers["Authorization"] = f"Bearer {token}"
        last = None
        for attempt in range(1, self.config.retry.attempts + 1):
            try:
                with self._gate:
                    response = self._session.post(
                        url, json=payload, headers=headers, timeout=self.config.timeout
                    )
                response.raise_for_status()
                return response.json()
            except (requests.RequestException, ValueError) as exc:
                last = exc
                if attempt < self.config.retry.attempts:
                    time.sleep(self.config.retry.backoff)
        raise ClientError(self.stage, last)


def _check_expression(expression: str) -> None:
    if not expression.strip():
        raise EmptyInput("expression is blank")


class HttpCaptioner:
    stage = "captioner"

    def __init__(self, endpoint: HttpEndpoint, store: ImageStore):
        self.endpoint = endpoint
        self.store = store

    def describe(self, image_ref: str, mask: BinaryMask, n: int) -> list[str]:
        if n < 1:
            raise DataError("must request at least one expression")
        if self.store.dims(image_ref) != (mask.width, mask.height):
            raise DimensionMismatch("mask does not match the image dimensions")
        payload = {
            "image_b64": encode_image_b64(self.store.load(image_ref)),
            "mask_rle": rle_encode(mask),
            "n": n,
        }
        data = self.endpoint.post("/describe", payload)
        texts = [t for t in data.get("expressions", []) if isinstance(t, str) and t.strip()]
        seen = set()
        unique = [t for t in texts if not (t in seen or seen.add(t))][:n]
        if not unique:
            raise EmptyResponse(self.stage, "service returned zero expressions")
        return unique


class HttpImageGenerator:
    stage = "image_generator"

    def __init__(self, endpoint: HttpEndpoint, store: ImageStore):
        self.endpoint = endpoint
        self.store = store

    def generate(self, prompt: str, seed: int, width: int, height: int) -> str:
        if not prompt.strip():
            raise EmptyInput("prompt is blank")
        data = self.endpoint.post(
            "/generate", {"prompt": prompt, "seed": int(seed), "w": width, "h": height}
        )
        try:
            pixels = decode_image_b64(data["image_b64"])
        except (KeyError, ValueError, OSError) as exc:
            raise ClientError(self.stage, exc) from exc
        if pixels.shape[:2] != (height, width):
            raise ClientError(
                self.stage, f"requested {width}x{height}, got {pixels.shape[1]}x{pixels.shape[0]}"
            )
        return self.store.put(pixels)


class HttpSegmenter:
    stage = "segmenter"

    def __init__(self, endpoint: HttpEndpoint, store: ImageStore):
        self.endpoint = endpoint
        self.store = store

    def segment(self, image_ref: str, expression: str) -> RasterMask:
        _check_expression(expression)
        width, height = self.store.dims(image_ref)
        payload = {
            "image_b64": encode_image_b64(self.store.load(image_ref)),
            "text": expression,
        }
        data = self.endpoint.post("/segment", payload)
        try:
            raster = data["raster"]
            values = decode_floats_b64(raster["values_b64"])
            mask = RasterMask(int(raster["w"]), int(raster["h"]), values)
        except (KeyError, ValueError, DataError) as exc:
            raise ClientError(self.stage, exc) from exc
        if (mask.width, mask.height) != (width, height):
            raise ClientError(self.stage, "raster does not match the image dimensions")
        return mask


class HttpAttributeCounter:
    stage = "attribute_counter"

    def __init__(self, endpoint: HttpEndpoint):
        self.endpoint = endpoint

    def classify(self, expression: str) -> dict[str, list[str]]:
        _check_expression(expression)
        data = self.endpoint.post("/classify", {"text": expression})
        attrs = data.get("attributes") or {}
        out = {}
        for key, category in zip(ATTRIBUTE_IDS, ATTRIBUTE_CATEGORIES):
            words = attrs.get(key, [])
            if not isinstance(words, list):
                raise ClientError(self.stage, f"attribute {key} is not a list")
            out[category] = [str(w) for w in words]
        return out


def attribute_prompt() -> str:
    """Instruction text shipped for production attribute-counting services."""
    return (
        resources.files("synres").joinpath("assets/attribute_prompt.txt").read_text("utf-8")
    )


# ---------------------------------------------------------------------------
# deterministic mocks


class MockCaptioner:
    """Emits n numbered expressions salted with a digest of the request.

    digest = fnv1a_64("describe|<image_ref>|<w>x<h>|<rle csv>|<n>"), rendered
    as 16 hex chars.
    """

    stage = "captioner"

    def describe(self, image_ref: str, mask: BinaryMask, n: int) -> list[str]:
        if n < 1:
            raise DataError("must request at least one expression")
        rle = ",".join(str(c) for c in rle_encode(mask))
        digest = fnv1a_64(f"describe|{image_ref}|{mask.width}x{mask.height}|{rle}|{n}")
        h16 = format(digest, "016x")
        return [f"mock expr {k} of {h16}" for k in range(n)]


class MockImageGenerator:
    """Renders a solid color taken from the low 24 bits of hash(prompt|seed)."""

    stage = "image_generator"

    def __init__(self, store: ImageStore):
        self.store = store

    def generate(self, prompt: str, seed: int, width: int, height: int) -> str:
        if not prompt.strip():
            raise EmptyInput("prompt is blank")
        h = fnv1a_64(f"{prompt}|{int(seed)}")
        color = np.array([h & 0xFF, (h >> 8) & 0xFF, (h >> 16) & 0xFF], dtype=np.uint8)
        pixels = np.broadcast_to(color, (height, width, 3)).copy()
        return self.store.put(pixels)


def quadrant_rect(bucket: int, width: int, height: int) -> tuple[int, int, int, int]:
    """Axis-aligned rectangle for one of the four quadrants, inset by 10%."""
    qw, qh = width // 2, height // 2
    boxes = (
        (0, 0, qw, qh),
        (qw, 0, width, qh),
        (0, qh, qw, height),
        (qw, qh, width, height),
    )
    x0, y0, x1, y1 = boxes[bucket]
    ix, iy = (x1 - x0) // 10, (y1 - y0) // 10
    return x0 + ix, y0 + iy, x1 - ix, y1 - iy


class MockSegmenter:
    """Predicts one of four quadrant rectangles chosen by hash(expression) % 4.

    The rectangle is shifted by (hash(image_ref) % 3 - 1) pixels in x and y,
    and clipped to the image. Confidence is 0.9 inside, 0.05 outside, so
    expressions sharing a bucket agree almost perfectly across images while
    distinct buckets stay disjoint.
    """

    stage = "segmenter"

    def __init__(self, store: ImageStore):
        self.store = store

    def segment(self, image_ref: str, expression: str) -> RasterMask:
        _check_expression(expression)
        width, height = self.store.dims(image_ref)
        bucket = fnv1a_64(expression) % 4
        shift = int(fnv1a_64(image_ref) % 3) - 1
        x0, y0, x1, y1 = quadrant_rect(bucket, width, height)
        x0, x1 = max(0, x0 + shift), min(width, x1 + shift)
        y0, y1 = max(0, y0 + shift), min(height, y1 + shift)
        values = np.full((height, width), 0.05)
        if x1 > x0 and y1 > y0:
            values[y0:y1, x0:x1] = 0.9
        return RasterMask(width, height, values)


_MOCK_LEXICON = (
    ("head noun", ("cat",)),
    ("sub noun", ("bench", "boat")),
    ("color", ("green",)),
    ("size", ("big",)),
    ("absolute location relation", ("the center",)),
    ("relative location relation", ("on", "next to", "in")),
    ("action", ("sitting",)),
    ("generic attribute", ("wooden",)),
)


class MockAttributeCounter:
    """Whole-word lexicon lookup; multi-word phrases match before single words."""

    stage = "attribute_counter"

    def __init__(self):
        self._category = {}
        phrases = []
        for category, words in _MOCK_LEXICON:
            for word in words:
                self._category[word] = category
                phrases.append(word)
        phrases.sort(key=len, reverse=True)
        self._pattern = re.compile(
            r"\b(?:" + "|".join(re.escape(p) for p in phrases) + r")\b"
        )

    def classify(self, expression: str) -> dict[str, list[str]]:
        _check_expression(expression)
        out = {category: [] for category in ATTRIBUTE_CATEGORIES}
        for match in self._pattern.finditer(expression.lower()):
            word = match.group(0)
            out[self._category[word]].append(word)
        return out


# ---------------------------------------------------------------------------
# suites


@dataclass(frozen=True)
class ClientSuite:
    captioner: object
    image_generator: object
    segmenter: object
    attribute_counter: object


def mock_suite(store: ImageStore) -> ClientSuite:
    return ClientSuite(
        captioner=MockCaptioner(),
        image_generator=MockImageGenerator(store),
        segmenter=MockSegmenter(store),
        attribute_counter=MockAttributeCounter(),
    )


def build_suite(specs: dict, store: ImageStore) -> ClientSuite:
    """Build a suite from per-service specs: "mock" or a ClientEndpointConfig."""
    factories = {
        "captioner": lambda cfg: HttpCaptioner(HttpEndpoint("captioner", cfg), store),
        "image_generator": lambda cfg: HttpImageGenerator(
            HttpEndpoint("image_generator", cfg), store
        ),
        "segmenter": lambda cfg: HttpSegmenter(HttpEndpoint("segmenter", cfg), store),
        "attribute_counter": lambda cfg: HttpAttributeCounter(
            HttpEndpoint("attribute_counter", cfg)
        ),
    }
    mocks = mock_suite(store)
    built = {}
    for name, factory in factories.items():
        spec = specs.get(name, "mock")
        if spec == "mock":
            built[name] = getattr(mocks, name)
        elif isinstance(spec, ClientEndpointConfig):
            built[name] = factory(spec)
        else:
            raise DataError(f"client {name}: expected 'mock' or an endpoint config")
    return ClientSuite(**built)
