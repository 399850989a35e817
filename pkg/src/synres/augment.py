"""Stage 3: mosaic image/mask composition and superclass text replacement.

Mosaics tile one real and several synthetic triplets onto a square grid
canvas, translating each resized mask to its tile offset. Superclass
replacement swaps specific nouns for broader category words with a fixed
probability, updating his/her to their whenever a gendered noun is replaced.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from PIL import Image

from .core import (
    BinaryMask,
    DataError,
    ImageStore,
    Lineage,
    ReferringTarget,
    TripletRecord,
    fnv1a_64,
    rng_stream,
)

logger = logging.getLogger("synres")

SUPERCLASS_ROWS = (
    ("child", ("boy", "girl", "son", "daughter")),
    ("kid", ("boy", "girl", "son", "daughter")),
    ("adult", ("woman", "women", "man", "men", "female", "male")),
    ("person", ("woman", "women", "man", "men", "female", "male", "boy", "girl", "guy")),
    ("their", ("his", "her")),
    ("vehicle", ("car", "bus", "plane", "train", "airplane", "truck", "boat", "motorcycle")),
    (
        "animal",
        (
            "bird",
            "cow",
            "bull",
            "rabbit",
            "bunny",
            "dog",
            "puppy",
            "cat",
            "zebra",
            "elephant",
            "horse",
            "giraffe",
        ),
    ),
    ("fruit", ("apple", "banana")),
    ("vegetable", ("broccoli", "carrot", "cabbage", "radish")),
    ("food", ("sandwich", "hot dog", "pizza", "donut", "doughnut", "cake", "hamburger")),
    (
        "electronic",
        ("tv", "television", "laptop", "computer", "keyboard", "cell phone", "smartphone"),
    ),
    ("furniture", ("chair", "couch", "sofa", "bed", "desk")),
)

GENDER_NOUNS = frozenset(
    {"woman", "women", "man", "men", "female", "male", "boy", "girl", "guy", "son", "daughter"}
)

_PRONOUN_PATTERN = re.compile(r"\b(?:his|her)\b", re.IGNORECASE)


class InsufficientTiles(DataError):
    """Not enough synthetic triplets to fill the drawn mosaic grid."""


@dataclass(frozen=True)
class SuperclassTable:
    rows: tuple = SUPERCLASS_ROWS
    pronoun_map: dict = field(default_factory=lambda: {"his": "their", "her": "their"})

    def __post_init__(self):
        for superclass, originals in self.rows:
            if superclass in originals:
                raise DataError(f"superclass {superclass!r} appears in its own originals")

    @cached_property
    def lexicon(self) -> dict[str, tuple[str, ...]]:
        """original word -> applicable superclasses, in table row order."""
        mapping: dict[str, list[str]] = {}
        for superclass, originals in self.rows:
            for word in originals:
                mapping.setdefault(word, []).append(superclass)
        return {word: tuple(classes) for word, classes in mapping.items()}

    @cached_property
    def pattern(self) -> re.Pattern:
        words = sorted(self.lexicon, key=len, reverse=True)
        return re.compile(
            r"\b(?:" + "|".join(re.escape(w) for w in words) + r")\b", re.IGNORECASE
        )


DEFAULT_SUPERCLASS_TABLE = SuperclassTable()


@dataclass(frozen=True)
class MosaicConfig:
    grid_choices: tuple[int, ...] = (2, 3)
    tile_size: int = 256
    replace_probability: float = 0.7
    rounds: int = 1

    def __post_init__(self):
        if self.tile_size < 1:
            raise DataError("tile_size must be positive")
        if not 0.0 <= self.replace_probability <= 1.0:
            raise DataError("replace_probability must lie in [0, 1]")
        if not self.grid_choices or any(g < 1 for g in self.grid_choices):
            raise DataError("grid choices must be positive")
        if self.rounds < 0:
            raise DataError("rounds must be non-negative")


@dataclass(frozen=True)
class TileSlot:
    source_ref: str
    row: int
    col: int
    kind: str
    text: str


@dataclass(frozen=True)
class MosaicSample:
    canvas_ref: str
    samples: tuple[tuple[str, BinaryMask], ...]
    tile_layout: tuple[TileSlot, ...]

    def __post_init__(self):
        if sum(1 for slot in self.tile_layout if slot.kind == "real") != 1:
            raise DataError("a mosaic carries exactly one real tile")


def _match_case(replacement: str, original: str) -> str:
    if original[:1].isupper():
        return replacement[:1].upper() + replacement[1:]
    return replacement


def superclass_replace(text: str, table: SuperclassTable, p: float, rng) -> str:
    """Replace whole-word noun matches with a superclass, each with probability p.

    Multi-word originals match before their component words. When several
    superclasses apply, one is drawn uniformly from the stream. Replacing any
    gendered noun forces every his/her in the result to their. The first
    letter keeps its capitalization.
    """
    pieces = []
    last = 0
    replaced_gendered = False
    for match in table.pattern.finditer(text):
        word = match.group(0)
        key = word.lower()
        if float(rng.random()) < p:
            choices = table.lexicon[key]
            choice = choices[int(rng.integers(len(choices)))] if len(choices) > 1 else choices[0]
            pieces.append(text[last : match.start()])
            pieces.append(_match_case(choice, word))
            last = match.end()
            if key in GENDER_NOUNS:
                replaced_gendered = True
    pieces.append(text[last:])
    result = "".join(pieces)
    if replaced_gendered:
        result = _PRONOUN_PATTERN.sub(
            lambda m: _match_case(table.pronoun_map[m.group(0).lower()], m.group(0)), result
        )
    return result


def _resize_image(pixels: np.ndarray, size: int) -> np.ndarray:
    img = Image.fromarray(pixels, mode="RGB").resize((size, size), Image.BILINEAR)
    return np.asarray(img, dtype=np.uint8)


def _resize_mask(bits: np.ndarray, size: int) -> np.ndarray:
    img = Image.fromarray(bits.astype(np.uint8), mode="L").resize((size, size), Image.NEAREST)
    return np.asarray(img, dtype=np.uint8).astype(bool)


def build_mosaic(
    real: TripletRecord,
    synthetic,
    config: MosaicConfig,
    rng,
    store: ImageStore,
    table: SuperclassTable = DEFAULT_SUPERCLASS_TABLE,
) -> MosaicSample:
    """Compose one mosaic canvas from a real triplet and a synthetic pool.

    Stream draw order is fixed: grid size, real tile position, pool
    permutation, then per synthetic tile (in placement order) the text
    replacement draws. Tiles whose final expression texts are byte-identical
    merge into one sample whose mask is the union of their canvas masks.
    """
    synthetic = list(synthetic)
    grid = config.grid_choices[int(rng.integers(len(config.grid_choices)))]
    cells = grid * grid
    if len(synthetic) < cells - 1:
        raise InsufficientTiles(
            f"grid {grid}x{grid} needs {cells - 1} synthetic tiles, pool has {len(synthetic)}"
        )
    real_pos = int(rng.integers(cells))
    order = rng.permutation(len(synthetic))
    chosen = iter(synthetic[int(k)] for k in order[: cells - 1])

    ts = config.tile_size
    side = grid * ts
    canvas = np.zeros((side, side, 3), dtype=np.uint8)
    tiles = []
    for pos in range(cells):
        row, col = divmod(pos, grid)
        if pos == real_pos:
            record, kind = real, "real"
            text = record.expression_text
        else:
            record, kind = next(chosen), "synthetic"
            text = superclass_replace(
                record.expression_text, table, config.replace_probability, rng
            )
        canvas[row * ts : (row + 1) * ts, col * ts : (col + 1) * ts] = _resize_image(
            store.load(record.image_ref), ts
        )
        tile_bits = _resize_mask(record.mask.bits, ts)
        canvas_bits = np.zeros((side, side), dtype=bool)
        canvas_bits[row * ts : (row + 1) * ts, col * ts : (col + 1) * ts] = tile_bits
        tiles.append((TileSlot(record.image_ref, row, col, kind, text), canvas_bits))

    canvas_ref = store.put(canvas, subdir="mosaic")
    merged: dict[str, np.ndarray] = {}
    for slot, canvas_bits in tiles:
        if slot.text in merged:
            merged[slot.text] = merged[slot.text] | canvas_bits
        else:
            merged[slot.text] = canvas_bits
    samples = tuple(
        (text, BinaryMask(side, side, bits)) for text, bits in merged.items()
    )
    return MosaicSample(
        canvas_ref=canvas_ref,
        samples=samples,
        tile_layout=tuple(slot for slot, _ in tiles),
    )


def run_step3(
    real_targets,
    step2_records,
    config: MosaicConfig,
    master_seed: int,
    store: ImageStore,
    table: SuperclassTable = DEFAULT_SUPERCLASS_TABLE,
) -> list[TripletRecord]:
    """Build config.rounds mosaics per target and flatten them to triplets.

    Each target draws its synthetic tiles from its own stage-2 records.
    Targets with too small a pool (or no human expression for the real tile)
    are skipped with a warning instead of aborting the run.
    """
    pools: dict[str, list[TripletRecord]] = {}
    for record in step2_records:
        pools.setdefault(record.lineage.target_id, []).append(record)

    out = []
    for target in sorted(real_targets, key=lambda t: t.target_id):
        if target.human_expression is None:
            logger.warning(
                "stage=step3 target=%s skipped reason=no_human_expression", target.target_id
            )
            continue
        real_record = TripletRecord(
            image_ref=target.real_image_ref,
            expression_text=target.human_expression.text,
            mask=target.real_mask,
            source="real",
            lineage=Lineage(target_id=target.target_id),
        )
        pool = pools.get(target.target_id, [])
        for rnd in range(config.rounds):
            rng = rng_stream(master_seed, target.target_id, "step3", rnd)
            try:
                sample = build_mosaic(real_record, pool, config, rng, store, table)
            except InsufficientTiles as exc:
                logger.warning(
                    "stage=step3 target=%s round=%d skipped reason=%s",
                    target.target_id,
                    rnd,
                    exc,
                )
                continue
            seed_meta = fnv1a_64(f"{master_seed}:{target.target_id}:step3:{rnd}")
            for text, mask in sample.samples:
                out.append(
                    TripletRecord(
                        image_ref=sample.canvas_ref,
                        expression_text=text,
                        mask=mask,
                        source="mosaic",
                        lineage=Lineage(
                            target_id=target.target_id,
                            group_id=f"mosaic:r{rnd}",
                            seed=seed_meta,
                        ),
                    )
                )
    return out
