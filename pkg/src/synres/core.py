"""Core data model: masks, expressions, triplets, and manifest persistence.

Masks carry their pixel grids as read-only numpy arrays in row-major order.
Binary masks serialize through a run-length code over the row-major bit scan
so manifests stay bit-exact and diffable. Images live in a content-addressed
store keyed by pixel bytes, which dedupes repeated tiles and keeps manifests
relocatable.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

TOOL_VERSION = "0.1.0"

EXPRESSION_PROVENANCES = ("human", "synthetic", "augmented")
RECORD_SOURCES = ("real", "synthetic", "mosaic")

# Confidence values are rounded to this many decimals whenever a raster mask
# is persisted, so re-reading an intermediate reproduces the exact floats.
RASTER_DECIMALS = 6


class SynresError(Exception):
    """Base class for all pipeline errors."""


class DataError(SynresError):
    """Invalid or internally inconsistent data."""


class SizeMismatch(DataError):
    """Run-length counts do not cover the declared mask area."""


class MalformedRle(DataError):
    """Run-length counts violate the canonical form."""


class DimensionMismatch(DataError):
    """Two masks or a mask and its image disagree on width/height."""


class EmptyInput(DataError):
    """An operation received an empty collection or blank text."""


class ConfigError(SynresError):
    """Bad or incomplete pipeline configuration."""


# ---------------------------------------------------------------------------
# hashing and deterministic streams

_FNV64_OFFSET = 0xCBF29CE484222325
_FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes | str) -> int:
    """64-bit FNV-1a hash over UTF-8 bytes; the hash used by mock clients."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = _FNV64_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV64_PRIME) & _MASK64
    return h


def rng_stream(*keys: int | str) -> np.random.Generator:
    """Deterministic counter-based generator keyed by ints and strings.

    Built on Philox so streams derived from disjoint key tuples are
    independent and results do not depend on thread scheduling.
    """
    words = [k & _MASK64 if isinstance(k, int) else fnv1a_64(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def canonical_json(obj) -> str:
    """Stable compact JSON used for digests and request hashing."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_digest(payload: dict) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# masks


def _as_grid(values, width: int, height: int, dtype) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    if arr.size != width * height:
        raise DimensionMismatch(
            f"expected {width}x{height}={width * height} values, got {arr.size}"
        )
    arr = np.ascontiguousarray(arr.reshape(height, width))
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RasterMask:
    """Continuous per-pixel confidence map with values in [0, 1]."""

    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DataError("mask dimensions must be positive")
        vals = _as_grid(self.values, self.width, self.height, np.float64)
        if not np.isfinite(vals).all() or vals.min() < 0.0 or vals.max() > 1.0:
            raise DataError("raster values must lie in [0, 1]")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Thresholded mask; one bit per pixel in row-major order."""

    width: int
    height: int
    bits: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DataError("mask dimensions must be positive")
        object.__setattr__(self, "bits", _as_grid(self.bits, self.width, self.height, bool))

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and bool(np.array_equal(self.bits, other.bits))
        )

    @property
    def area(self) -> int:
        """Number of set bits."""
        return int(np.count_nonzero(self.bits))


def quantize_raster(mask: RasterMask) -> RasterMask:
    """Round confidences to the persisted precision (6 decimals)."""
    return RasterMask(mask.width, mask.height, np.round(mask.values, RASTER_DECIMALS))


# ---------------------------------------------------------------------------
# run-length coding
#
# Counts alternate 0-run, 1-run, 0-run, ... over the row-major scan. A mask
# starting with a set pixel gets a leading zero count. Canonical form has no
# other zero counts, so encode/decode round-trips bit-exactly.


def rle_encode(mask: BinaryMask) -> list[int]:
    flat = mask.bits.reshape(-1)
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return [int(c) for c in counts]


def rle_decode(width: int, height: int, counts) -> BinaryMask:
    runs = [int(c) for c in counts]
    if any(c < 0 for c in runs):
        raise MalformedRle("negative run length")
    if any(c == 0 for c in runs[1:]):
        raise MalformedRle("zero-length run after the first position")
    if sum(runs) != width * height:
        raise SizeMismatch(f"run lengths sum to {sum(runs)}, expected {width * height}")
    values = (np.arange(len(runs)) % 2).astype(bool)
    return BinaryMask(width, height, np.repeat(values, runs))


def mask_to_json(mask: BinaryMask) -> dict:
    return {"w": mask.width, "h": mask.height, "rle": rle_encode(mask)}


def mask_from_json(obj) -> BinaryMask:
    if not isinstance(obj, dict) or not {"w", "h", "rle"} <= set(obj):
        raise MalformedRle("mask object must carry w, h, and rle fields")
    return rle_decode(int(obj["w"]), int(obj["h"]), obj["rle"])


def raster_to_json(mask: RasterMask) -> dict:
    flat = np.round(mask.values, RASTER_DECIMALS).reshape(-1)
    return {"w": mask.width, "h": mask.height, "values": flat.tolist()}


def raster_from_json(obj) -> RasterMask:
    return RasterMask(int(obj["w"]), int(obj["h"]), obj["values"])


# ---------------------------------------------------------------------------
# domain records


@dataclass(frozen=True)
class Expression:
    """One referring expression attached to a target."""

    id: str
    text: str
    target_id: str
    provenance: str = "synthetic"

    def __post_init__(self):
        if not self.text.strip():
            raise EmptyInput("expression text is blank")
        if self.provenance not in EXPRESSION_PROVENANCES:
            raise DataError(f"unknown provenance {self.provenance!r}")


@dataclass(frozen=True)
class ReferringTarget:
    """A real image, its ground-truth mask, and optional human expression."""

    target_id: str
    real_image_ref: str
    real_mask: BinaryMask
    human_expression: Expression | None = None


@dataclass(frozen=True)
class GeneratedImage:
    """Content-addressed synthetic image plus the seed that produced it."""

    ref: str
    seed: int


@dataclass(frozen=True)
class SyntheticBatch:
    """Everything stage 1 produced for one target.

    pseudo_masks[i][j] is the raster mask the segmenter predicted for
    synthetic image i under expression j, so the grid is m images by
    n expressions.
    """

    target_id: str
    prompt: str
    expressions: tuple[Expression, ...]
    images: tuple[GeneratedImage, ...]
    pseudo_masks: tuple[tuple[RasterMask, ...], ...]

    def __post_init__(self):
        m, n = len(self.images), len(self.expressions)
        if len(self.pseudo_masks) != m:
            raise DimensionMismatch(f"expected {m} mask rows, got {len(self.pseudo_masks)}")
        for i, row in enumerate(self.pseudo_masks):
            if len(row) != n:
                raise DimensionMismatch(f"mask row {i} has {len(row)} entries, expected {n}")
            for mask in row[1:]:
                if (mask.width, mask.height) != (row[0].width, row[0].height):
                    raise DimensionMismatch(f"masks for image {i} disagree on dimensions")

    @property
    def m(self) -> int:
        return len(self.images)

    @property
    def n(self) -> int:
        return len(self.expressions)


@dataclass(frozen=True)
class ConsensusGroup:
    """Expressions whose pseudo-masks agree, with one refined mask per image."""

    group_id: str
    member_expression_ids: frozenset[str]
    refined_masks: tuple[BinaryMask, ...]

    def __post_init__(self):
        if len(self.member_expression_ids) < 2:
            raise DataError("consensus groups need at least two members")


@dataclass(frozen=True)
class Lineage:
    """Where a triplet came from."""

    target_id: str
    group_id: str | None = None
    seed: int | None = None


@dataclass(frozen=True)
class TripletRecord:
    """One (image, expression, mask) training sample."""

    image_ref: str
    expression_text: str
    mask: BinaryMask
    source: str
    lineage: Lineage

    def __post_init__(self):
        if self.source not in RECORD_SOURCES:
            raise DataError(f"unknown record source {self.source!r}")


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[TripletRecord, ...]
    meta: dict = field(compare=False)


# ---------------------------------------------------------------------------
# manifest serialization (JSON Lines; final line is the meta object)


def manifest_counts(records) -> dict:
    images = {r.image_ref for r in records}
    expressions = {r.expression_text for r in records}
    masks = {(r.mask.width, r.mask.height, tuple(rle_encode(r.mask))) for r in records}
    return {"images": len(images), "expressions": len(expressions), "masks": len(masks)}


def build_manifest(records, config_payload: dict) -> DatasetManifest:
    meta = {
        "config_digest": config_digest(config_payload),
        "config": config_payload,
        "counts": manifest_counts(records),
        "tool_version": TOOL_VERSION,
    }
    return DatasetManifest(records=tuple(records), meta=meta)


def record_to_json(record: TripletRecord) -> dict:
    return {
        "type": "record",
        "image_ref": record.image_ref,
        "expression": record.expression_text,
        "mask": mask_to_json(record.mask),
        "source": record.source,
        "lineage": {
            "target_id": record.lineage.target_id,
            "group_id": record.lineage.group_id,
            "seed": record.lineage.seed,
        },
    }


def record_from_json(obj: dict) -> TripletRecord:
    lineage = obj.get("lineage") or {}
    return TripletRecord(
        image_ref=obj["image_ref"],
        expression_text=obj["expression"],
        mask=mask_from_json(obj["mask"]),
        source=obj["source"],
        lineage=Lineage(
            target_id=lineage.get("target_id", ""),
            group_id=lineage.get("group_id"),
            seed=lineage.get("seed"),
        ),
    )


def dump_manifest(manifest: DatasetManifest) -> str:
    lines = [
        json.dumps(record_to_json(r), sort_keys=True, separators=(",", ":"))
        for r in manifest.records
    ]
    meta_row = {"type": "meta", **manifest.meta}
    lines.append(json.dumps(meta_row, sort_keys=True, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    _atomic_write_text(Path(path), dump_manifest(manifest))


def read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno} is not valid JSON: {exc}") from exc
    return rows


def load_manifest(path: str | Path) -> DatasetManifest:
    rows = read_jsonl(path)
    if not rows or rows[-1].get("type") != "meta":
        raise DataError(f"{path}: manifest must end with a meta line")
    meta = {k: v for k, v in rows[-1].items() if k != "type"}
    records = tuple(record_from_json(r) for r in rows[:-1])
    return DatasetManifest(records=records, meta=meta)


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    line: int | None = None


def validate_manifest(manifest, store: "ImageStore | None" = None) -> list[Violation]:
    """Check a manifest for structural problems; violations are data, not errors.

    Accepts a parsed DatasetManifest or the raw JSONL rows. When a store is
    given, each record's mask dimensions are checked against its image.
    """
    if isinstance(manifest, DatasetManifest):
        rows = [record_to_json(r) for r in manifest.records]
        rows.append({"type": "meta", **manifest.meta})
    else:
        rows = list(manifest)

    violations: list[Violation] = []
    meta = None
    record_rows: list[tuple[int, dict]] = []
    for idx, row in enumerate(rows, 1):
        kind = row.get("type") if isinstance(row, dict) else None
        if kind == "meta":
            if meta is not None:
                violations.append(Violation("BadRecord", "duplicate meta line", idx))
            meta = row
        elif kind == "record":
            record_rows.append((idx, row))
        else:
            violations.append(Violation("BadRecord", f"unknown row type {kind!r}", idx))

    images, expressions, masks = set(), set(), set()
    for idx, row in record_rows:
        images.add(row.get("image_ref"))
        expressions.add(row.get("expression"))
        mask_obj = row.get("mask")
        try:
            mask = mask_from_json(mask_obj)
        except DataError as exc:
            violations.append(Violation("MalformedRle", str(exc), idx))
            if isinstance(mask_obj, dict):
                masks.add(canonical_json(mask_obj))
            continue
        masks.add((mask.width, mask.height, tuple(rle_encode(mask))))
        if store is not None:
            try:
                dims = store.dims(row.get("image_ref"))
            except DataError:
                violations.append(
                    Violation("MissingImage", f"image {row.get('image_ref')!r} not found", idx)
                )
                continue
            if dims != (mask.width, mask.height):
                violations.append(
                    Violation(
                        "DimensionMismatch",
                        f"mask is {mask.width}x{mask.height} but image is {dims[0]}x{dims[1]}",
                        idx,
                    )
                )

    if meta is None:
        violations.append(Violation("MissingMeta", "manifest has no meta line"))
    else:
        claimed = meta.get("counts") or {}
        actual = {"images": len(images), "expressions": len(expressions), "masks": len(masks)}
        for key, value in actual.items():
            if claimed.get(key) != value:
                violations.append(
                    Violation(
                        "CountMismatch",
                        f"meta claims {claimed.get(key)} {key}, manifest has {value}",
                    )
                )
    return violations


# ---------------------------------------------------------------------------
# content-addressed image store


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


class ImageStore:
    """Content-addressed store of lossless RGB rasters under one directory.

    References are the hex digest of the pixel bytes, so identical content
    maps to one file regardless of who wrote it or where the store lives.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def ref_for(pixels: np.ndarray) -> str:
        pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
        h, w = pixels.shape[:2]
        digest = hashlib.sha256(b"rgb8:%dx%d:" % (w, h) + pixels.tobytes())
        return digest.hexdigest()[:32]

    def put(self, pixels: np.ndarray, subdir: str = "") -> str:
        pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise DataError("image store holds (h, w, 3) uint8 arrays")
        ref = self.ref_for(pixels)
        directory = self.root / subdir if subdir else self.root
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"{ref}.png"
        if not path.exists():
            fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
            os.close(fd)
            Image.fromarray(pixels, mode="RGB").save(tmp, format="PNG")
            os.replace(tmp, path)
        return ref

    def path_for(self, ref: str) -> Path:
        direct = self.root / f"{ref}.png"
        if direct.exists():
            return direct
        nested = sorted(self.root.glob(f"*/{ref}.png"))
        if nested:
            return nested[0]
        raise DataError(f"unknown image ref {ref!r}")

    def load(self, ref: str) -> np.ndarray:
        with Image.open(self.path_for(ref)) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)

    def dims(self, ref: str) -> tuple[int, int]:
        """(width, height) of the stored image."""
        with Image.open(self.path_for(ref)) as img:
            return img.size
