"""Referring-target manifest IO plus demo target fabrication.

Targets arrive as JSONL rows {"target_id", "image_ref", "mask", "expression"}
with images resolved through the workspace store. The fabricator writes a
small self-contained workspace so the pipeline can run without any external
data, which is also what the tests use.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from .core import (
    DataError,
    DimensionMismatch,
    Expression,
    ImageStore,
    ReferringTarget,
    mask_from_json,
    mask_to_json,
    read_jsonl,
    rng_stream,
)

_DEMO_PHRASES = (
    "the woman holding a camera",
    "a red car parked by the fence",
    "the dog waiting near the bench",
    "a man carrying his backpack",
    "the green boat at the pier",
    "a laptop on the wooden desk",
    "the girl eating an apple",
    "a bus stopped at the corner",
)


def load_targets(path: str | Path, store: ImageStore | None = None) -> list[ReferringTarget]:
    targets = []
    for idx, row in enumerate(read_jsonl(path), 1):
        try:
            target_id = row["target_id"]
            image_ref = row["image_ref"]
            mask = mask_from_json(row["mask"])
        except KeyError as exc:
            raise DataError(f"{path}: target row {idx} is missing {exc}") from exc
        if store is not None and store.dims(image_ref) != (mask.width, mask.height):
            raise DimensionMismatch(f"{path}: target {target_id} mask does not match its image")
        text = row.get("expression")
        expression = None
        if text:
            expression = Expression(
                id=f"{target_id}:human", text=text, target_id=target_id, provenance="human"
            )
        targets.append(
            ReferringTarget(
                target_id=target_id,
                real_image_ref=image_ref,
                real_mask=mask,
                human_expression=expression,
            )
        )
    return targets


def write_targets(targets, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for t in targets:
        row = {
            "target_id": t.target_id,
            "image_ref": t.real_image_ref,
            "mask": mask_to_json(t.real_mask),
            "expression": t.human_expression.text if t.human_expression else None,
        }
        lines.append(json.dumps(row, sort_keys=True, separators=(",", ":")))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def fabricate_targets(
    count: int, store: ImageStore, seed: int = 0, size: int = 48
) -> list[ReferringTarget]:
    """Deterministic noise images with rectangular masks and stock expressions."""
    from .core import BinaryMask

    if size < 8:
        raise DataError("demo targets need at least 8x8 images")
    targets = []
    for k in range(count):
        rng = rng_stream(seed, "demo-target", k)
        pixels = rng.integers(0, 256, size=(size, size, 3), dtype=np.int64).astype(np.uint8)
        ref = store.put(pixels)
        x0, y0 = int(rng.integers(size // 2)), int(rng.integers(size // 2))
        w = int(rng.integers(4, size - x0))
        h = int(rng.integers(4, size - y0))
        bits = np.zeros((size, size), dtype=bool)
        bits[y0 : y0 + h, x0 : x0 + w] = True
        target_id = f"t{k:03d}"
        text = _DEMO_PHRASES[k % len(_DEMO_PHRASES)]
        targets.append(
            ReferringTarget(
                target_id=target_id,
                real_image_ref=ref,
                real_mask=BinaryMask(size, size, bits),
                human_expression=Expression(
                    id=f"{target_id}:human", text=text, target_id=target_id, provenance="human"
                ),
            )
        )
    return targets


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="synres-demo-targets", description="Write a demo workspace with fabricated targets"
    )
    parser.add_argument("--workspace", default="workspace")
    parser.add_argument("--count", type=int, default=4)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--size", type=int, default=48)
    args = parser.parse_args(argv)

    workspace = Path(args.workspace)
    store = ImageStore(workspace / "images")
    targets = fabricate_targets(args.count, store, seed=args.seed, size=args.size)
    write_targets(targets, workspace / "targets.jsonl")
    print(f"wrote {len(targets)} targets under {workspace}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
