"""Stage 1: expression aggregation, prompt templating, and batch assembly.

The captioner proposes distinctive expressions for a target, the aggregated
expressions feed one composite prompt, the image generator renders it under
m consecutive seeds, and the segmenter predicts one pseudo-mask per
image-expression pair. Everything downstream sees the resulting batch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .clients import ClientSuite, EmptyResponse
from .core import (
    DataError,
    EmptyInput,
    Expression,
    GeneratedImage,
    ReferringTarget,
    SynresError,
    SyntheticBatch,
    quantize_raster,
    rng_stream,
)

logger = logging.getLogger("synres")

PROMPT_TEMPLATES = (
    "photo of {description}, hyper-realistic, 4k, realism, highly detailed, "
    "natural realistic background",
    "cinematic scene {description}, hyper-realistic, 4k, realism, highly detailed, "
    "natural realistic background",
)

_TRAILING = ".,;:!? \t\r\n"


class PartialBatch(SynresError):
    """The captioner produced no usable expressions for a target."""


@dataclass(frozen=True)
class SynthesisConfig:
    n_expressions: int = 5
    m_images: int = 6
    seed_base: int = 0
    binarize_threshold: float = 0.5

    def __post_init__(self):
        if self.n_expressions < 1 or self.m_images < 1:
            raise DataError("expression and image counts must be at least 1")
        if not 0.0 < self.binarize_threshold < 1.0:
            raise DataError("binarize threshold must lie strictly between 0 and 1")


def aggregate_expressions(texts) -> str:
    """Join expressions with ', ' after trimming trailing punctuation."""
    texts = list(texts)
    if not texts:
        raise EmptyInput("nothing to aggregate")
    cleaned = []
    for text in texts:
        trimmed = text.strip().rstrip(_TRAILING)
        if not trimmed:
            raise EmptyInput(f"expression {text!r} is empty after trimming")
        cleaned.append(trimmed)
    return ", ".join(cleaned)


def build_prompt(aggregated: str, rng) -> str:
    """Fill one of the two generation templates, chosen uniformly by the stream."""
    if not aggregated.strip():
        raise EmptyInput("aggregated description is blank")
    template = PROMPT_TEMPLATES[int(rng.integers(len(PROMPT_TEMPLATES)))]
    return template.format(description=aggregated)


def run_step1(
    target: ReferringTarget, config: SynthesisConfig, clients: ClientSuite
) -> SyntheticBatch:
    """Assemble the full m-by-n synthetic batch for one target.

    Synthetic images share the real image's dimensions. Duplicate captioner
    texts are dropped before aggregation; pseudo-mask confidences are rounded
    to the persisted precision so in-memory and reloaded batches agree.
    """
    try:
        texts = clients.captioner.describe(
            target.real_image_ref, target.real_mask, config.n_expressions
        )
    except EmptyResponse as exc:
        raise PartialBatch(f"target {target.target_id}: captioner returned nothing") from exc
    seen = set()
    unique = [t for t in texts if not (t in seen or seen.add(t))]
    if not unique:
        raise PartialBatch(f"target {target.target_id}: captioner returned nothing")

    expressions = tuple(
        Expression(
            id=f"{target.target_id}:e{j}",
            text=text,
            target_id=target.target_id,
            provenance="synthetic",
        )
        for j, text in enumerate(unique)
    )
    prompt = build_prompt(
        aggregate_expressions([e.text for e in expressions]),
        rng_stream(config.seed_base, "prompt"),
    )

    width, height = target.real_mask.width, target.real_mask.height
    images = []
    for i in range(config.m_images):
        seed = (config.seed_base + i) & 0xFFFFFFFFFFFFFFFF
        ref = clients.image_generator.generate(prompt, seed, width, height)
        images.append(GeneratedImage(ref=ref, seed=seed))

    grid = []
    for image in images:
        row = tuple(
            quantize_raster(clients.segmenter.segment(image.ref, expr.text))
            for expr in expressions
        )
        grid.append(row)

    logger.debug(
        "stage=step1 target=%s expressions=%d images=%d",
        target.target_id,
        len(expressions),
        len(images),
    )
    return SyntheticBatch(
        target_id=target.target_id,
        prompt=prompt,
        expressions=expressions,
        images=tuple(images),
        pseudo_masks=tuple(grid),
    )
