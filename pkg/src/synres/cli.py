"""Pipeline orchestration and the synres command line.

Stages persist their intermediates under the workspace (step1/batches.jsonl,
step2/triplets.jsonl, step3/triplets.jsonl) and each stage reads its input
back from disk, so resuming in a fresh process reproduces a single-process
run byte for byte. The final manifest is validated before it is written.

Exit codes: 0 success, 2 config error, 3 client error, 4 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .augment import MosaicConfig, run_step3
from .clients import ClientEndpointConfig, ClientError, RetryPolicy, build_suite
from .core import (
    ConfigError,
    DataError,
    DatasetManifest,
    Expression,
    GeneratedImage,
    ImageStore,
    SynresError,
    SyntheticBatch,
    _atomic_write_text,
    build_manifest,
    fnv1a_64,
    mask_from_json,
    raster_from_json,
    raster_to_json,
    read_jsonl,
    record_from_json,
    record_to_json,
    validate_manifest,
    write_manifest,
)
from .evaluate import (
    EvalSample,
    attribute_histogram,
    benchmark_stats,
    evaluate_samples,
    histogram_csv,
    report_csv,
    stats_csv,
)
from .grouping import GroupingConfig, run_step2
from .synthesis import SynthesisConfig, run_step1
from .targets import load_targets

logger = logging.getLogger("synres")

STAGE_ORDER = ("step1", "step2", "step3")
CLIENT_NAMES = ("captioner", "image_generator", "segmenter", "attribute_counter")


@dataclass(frozen=True)
class PipelineConfig:
    master_seed: int
    synthesis: SynthesisConfig
    grouping: GroupingConfig
    mosaic: MosaicConfig
    clients: dict
    workspace: Path
    targets: Path
    workers: int

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")


def _section(raw: dict, name: str, allowed: tuple[str, ...]) -> dict:
    section = raw.get(name) or {}
    if not isinstance(section, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"config section {name!r} has unknown keys: {sorted(unknown)}")
    return section


def _client_spec(name: str, value):
    if value == "mock":
        return "mock"
    if not isinstance(value, dict):
        raise ConfigError(f"client {name!r} must be \"mock\" or an endpoint object")
    unknown = set(value) - {"base_url", "timeout", "max_in_flight", "retry", "auth_token"}
    if unknown:
        raise ConfigError(f"client {name!r} has unknown keys: {sorted(unknown)}")
    if "base_url" not in value:
        raise ConfigError(f"client {name!r} endpoint needs a base_url")
    retry = value.get("retry") or {}
    return ClientEndpointConfig(
        base_url=value["base_url"],
        timeout=float(value.get("timeout", 30.0)),
        max_in_flight=int(value.get("max_in_flight", 4)),
        retry=RetryPolicy(
            attempts=int(retry.get("attempts", 3)), backoff=float(retry.get("backoff", 0.2))
        ),
        auth_token=value.get("auth_token"),
    )


def load_config(
    path: str | Path | None,
    workspace_override: str | None = None,
    seed_override: int | None = None,
    force_mock: bool = False,
) -> PipelineConfig:
    """Build the effective config; every default matches the stock settings
    (6 images, 5 expressions, tau 0.65, replacement probability 0.7)."""
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    unknown = set(raw) - {"master_seed", "synthesis", "grouping", "mosaic", "clients", "io", "workers"}
    if unknown:
        raise ConfigError(f"config has unknown keys: {sorted(unknown)}")

    try:
        synth = _section(raw, "synthesis", ("n_expressions", "m_images", "binarize_threshold"))
        synthesis = SynthesisConfig(
            n_expressions=int(synth.get("n_expressions", 5)),
            m_images=int(synth.get("m_images", 6)),
            binarize_threshold=float(synth.get("binarize_threshold", 0.5)),
        )
        group = _section(raw, "grouping", ("tau", "min_group_size"))
        grouping = GroupingConfig(
            tau=float(group.get("tau", 0.65)),
            min_group_size=int(group.get("min_group_size", 2)),
        )
        mos = _section(raw, "mosaic", ("grid_choices", "tile_size", "replace_probability", "rounds"))
        mosaic = MosaicConfig(
            grid_choices=tuple(int(g) for g in mos.get("grid_choices", (2, 3))),
            tile_size=int(mos.get("tile_size", 256)),
            replace_probability=float(mos.get("replace_probability", 0.7)),
            rounds=int(mos.get("rounds", 1)),
        )
    except DataError as exc:
        raise ConfigError(str(exc)) from exc

    clients_raw = raw.get("clients") or {}
    unknown = set(clients_raw) - set(CLIENT_NAMES)
    if unknown:
        raise ConfigError(f"config names unknown clients: {sorted(unknown)}")
    clients = {}
    for name in CLIENT_NAMES:
        if force_mock:
            clients[name] = "mock"
        else:
            clients[name] = _client_spec(name, clients_raw.get(name, "mock"))

    io_raw = _section(raw, "io", ("workspace", "targets"))
    if workspace_override:
        workspace = Path(workspace_override)
    elif os.environ.get("SYNRES_WORKSPACE"):
        workspace = Path(os.environ["SYNRES_WORKSPACE"])
    else:
        workspace = Path(io_raw.get("workspace", "workspace"))
    targets = Path(io_raw.get("targets", "targets.jsonl"))
    if not targets.is_absolute():
        targets = workspace / targets

    master_seed = int(raw.get("master_seed", 0)) if seed_override is None else int(seed_override)
    return PipelineConfig(
        master_seed=master_seed,
        synthesis=synthesis,
        grouping=grouping,
        mosaic=mosaic,
        clients=clients,
        workspace=workspace,
        targets=targets,
        workers=int(raw.get("workers", 1)),
    )


def config_payload(config: PipelineConfig) -> dict:
    """Digest payload embedded in the manifest meta.

    Excludes local paths, worker count, and auth secrets so identical
    pipelines produce identical manifests regardless of where or how wide
    they ran.
    """
    clients = {}
    for name in CLIENT_NAMES:
        spec = config.clients.get(name, "mock")
        if spec == "mock":
            clients[name] = "mock"
        else:
            clients[name] = {
                "base_url": spec.base_url,
                "timeout": spec.timeout,
                "max_in_flight": spec.max_in_flight,
                "retry": {"attempts": spec.retry.attempts, "backoff": spec.retry.backoff},
            }
    return {
        "master_seed": config.master_seed,
        "synthesis": {
            "n_expressions": config.synthesis.n_expressions,
            "m_images": config.synthesis.m_images,
            "binarize_threshold": config.synthesis.binarize_threshold,
        },
        "grouping": {
            "tau": config.grouping.tau,
            "min_group_size": config.grouping.min_group_size,
        },
        "mosaic": {
            "grid_choices": list(config.mosaic.grid_choices),
            "tile_size": config.mosaic.tile_size,
            "replace_probability": config.mosaic.replace_probability,
            "rounds": config.mosaic.rounds,
        },
        "clients": clients,
    }


# ---------------------------------------------------------------------------
# batch persistence


def batch_to_json(batch: SyntheticBatch) -> dict:
    return {
        "target_id": batch.target_id,
        "prompt": batch.prompt,
        "expressions": [
            {"id": e.id, "text": e.text, "target_id": e.target_id, "provenance": e.provenance}
            for e in batch.expressions
        ],
        "images": [{"ref": img.ref, "seed": img.seed} for img in batch.images],
        "pseudo_masks": [[raster_to_json(m) for m in row] for row in batch.pseudo_masks],
    }


def batch_from_json(obj: dict) -> SyntheticBatch:
    return SyntheticBatch(
        target_id=obj["target_id"],
        prompt=obj["prompt"],
        expressions=tuple(
            Expression(
                id=e["id"], text=e["text"], target_id=e["target_id"], provenance=e["provenance"]
            )
            for e in obj["expressions"]
        ),
        images=tuple(GeneratedImage(ref=i["ref"], seed=i["seed"]) for i in obj["images"]),
        pseudo_masks=tuple(
            tuple(raster_from_json(m) for m in row) for row in obj["pseudo_masks"]
        ),
    )


def _write_jsonl(rows, path: Path) -> None:
    text = "\n".join(json.dumps(r, sort_keys=True, separators=(",", ":")) for r in rows)
    _atomic_write_text(path, text + "\n" if text else "")


# ---------------------------------------------------------------------------
# pipeline


def _validate_stages(config: PipelineConfig, stages) -> tuple[str, ...]:
    requested = list(dict.fromkeys(stages))
    unknown = [s for s in requested if s not in STAGE_ORDER]
    if unknown:
        raise ConfigError(f"unknown stages: {unknown}")
    if not requested:
        raise ConfigError("no stages requested")
    indices = sorted(STAGE_ORDER.index(s) for s in requested)
    if indices != list(range(indices[0], indices[-1] + 1)):
        raise ConfigError("stages must form a contiguous chain")
    first = STAGE_ORDER[indices[0]]
    prerequisites = {
        "step2": config.workspace / "step1" / "batches.jsonl",
        "step3": config.workspace / "step2" / "triplets.jsonl",
    }
    if first in prerequisites and not prerequisites[first].exists():
        raise ConfigError(
            f"stage {first} needs {prerequisites[first]} from an earlier run"
        )
    return tuple(STAGE_ORDER[i] for i in indices)


def _map_by_key(fn, items, workers: int, key):
    """Apply fn across items, returning results ordered by key regardless of
    scheduling; raises the first failure."""
    if workers <= 1 or len(items) <= 1:
        results = {key(item): fn(item) for item in items}
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {key(item): pool.submit(fn, item) for item in items}
            results = {k: future.result() for k, future in futures.items()}
    return [results[k] for k in sorted(results)]


def run_pipeline(config: PipelineConfig, stages) -> DatasetManifest:
    stages = _validate_stages(config, stages)
    store = ImageStore(config.workspace / "images")
    suite = build_suite(config.clients, store)
    try:
        targets = load_targets(config.targets, store)
    except FileNotFoundError as exc:
        raise ConfigError(f"targets manifest not found: {config.targets}") from exc
    ids = [t.target_id for t in targets]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate target ids in the targets manifest")

    step1_path = config.workspace / "step1" / "batches.jsonl"
    step2_path = config.workspace / "step2" / "triplets.jsonl"
    step3_path = config.workspace / "step3" / "triplets.jsonl"

    if "step1" in stages:
        t0 = time.monotonic()

        def synthesize(target):
            per_target = replace(
                config.synthesis,
                seed_base=fnv1a_64(f"{config.master_seed}:{target.target_id}:step1"),
            )
            return run_step1(target, per_target, suite)

        batches = _map_by_key(synthesize, targets, config.workers, key=lambda t: t.target_id)
        _write_jsonl([batch_to_json(b) for b in batches], step1_path)
        logger.info(
            "stage=step1 targets=%d duration_ms=%.1f", len(batches), 1e3 * (time.monotonic() - t0)
        )

    if "step2" in stages:
        t0 = time.monotonic()
        batches = [batch_from_json(row) for row in read_jsonl(step1_path)]
        record_lists = _map_by_key(
            lambda b: run_step2(b, config.grouping, config.synthesis.binarize_threshold),
            batches,
            config.workers,
            key=lambda b: b.target_id,
        )
        rows = [record_to_json(r) for records in record_lists for r in records]
        _write_jsonl(rows, step2_path)
        logger.info(
            "stage=step2 targets=%d records=%d duration_ms=%.1f",
            len(batches),
            len(rows),
            1e3 * (time.monotonic() - t0),
        )

    if "step3" in stages:
        t0 = time.monotonic()
        step2_records = [record_from_json(row) for row in read_jsonl(step2_path)]
        mosaic_records = run_step3(
            targets, step2_records, config.mosaic, config.master_seed, store
        )
        _write_jsonl([record_to_json(r) for r in mosaic_records], step3_path)
        logger.info(
            "stage=step3 targets=%d records=%d duration_ms=%.1f",
            len(targets),
            len(mosaic_records),
            1e3 * (time.monotonic() - t0),
        )

    records = []
    for path in (step2_path, step3_path):
        if path.exists():
            records.extend(record_from_json(row) for row in read_jsonl(path))
    manifest = build_manifest(records, config_payload(config))
    violations = validate_manifest(manifest)
    if violations:
        details = "; ".join(f"{v.kind}: {v.message}" for v in violations[:5])
        raise DataError(f"manifest failed validation ({len(violations)} violations): {details}")
    write_manifest(manifest, config.workspace / "manifest.jsonl")
    logger.info(
        "stage=manifest records=%d images=%d expressions=%d masks=%d",
        len(records),
        manifest.meta["counts"]["images"],
        manifest.meta["counts"]["expressions"],
        manifest.meta["counts"]["masks"],
    )
    return manifest


# ---------------------------------------------------------------------------
# subcommands


def _pipeline_command(args, stages) -> int:
    config = load_config(
        args.config,
        workspace_override=args.workspace,
        seed_override=args.seed,
        force_mock=args.mock,
    )
    run_pipeline(config, stages)
    return 0


def _load_mask_dump(path: str) -> dict:
    masks = {}
    for idx, row in enumerate(read_jsonl(path), 1):
        if row.get("type") == "meta":
            continue
        if "sample_id" not in row or "mask" not in row:
            raise DataError(f"{path}: row {idx} needs sample_id and mask fields")
        masks[row["sample_id"]] = mask_from_json(row["mask"])
    return masks


def _cmd_eval(args) -> int:
    predictions = _load_mask_dump(args.pred)
    truths = _load_mask_dump(args.gt)
    if set(predictions) != set(truths):
        only_pred = sorted(set(predictions) - set(truths))[:3]
        only_gt = sorted(set(truths) - set(predictions))[:3]
        raise DataError(
            f"sample ids differ between dumps (pred-only {only_pred}, gt-only {only_gt})"
        )
    sample_ids = sorted(predictions)
    samples = [EvalSample(sid, truths[sid], predictions[sid]) for sid in sample_ids]
    report = evaluate_samples(samples)
    if args.csv:
        Path(args.csv).write_text(report_csv(sample_ids, report), encoding="utf-8")
    print(
        f"samples={report.counts['samples']} giou={report.giou:.6f} ciou={report.ciou:.6f}"
    )
    return 0


def _cmd_stats(args) -> int:
    rows = read_jsonl(args.manifest)
    stats = benchmark_stats(rows)
    for (btype, domain, split, attribute), (images, expressions) in stats.cells.items():
        print(
            f"{btype} {domain} {split} {attribute}: images={images} expressions={expressions}"
        )
    for (btype, split), (images, expressions) in stats.split_totals.items():
        print(f"{btype} {split} Total: images={images} expressions={expressions}")
    print(f"Total: images={stats.total_images} expressions={stats.total_expressions}")
    for note in stats.notes:
        print(f"note: {note}")
    if args.cells_csv:
        Path(args.cells_csv).write_text(stats_csv(stats), encoding="utf-8")
    if args.attributes_csv:
        config = load_config(args.config, workspace_override=args.workspace, force_mock=args.mock)
        store = ImageStore(config.workspace / "images")
        suite = build_suite(config.clients, store)
        histogram = attribute_histogram(
            [row["expression"] for row in rows], suite.attribute_counter
        )
        Path(args.attributes_csv).write_text(histogram_csv(histogram), encoding="utf-8")
    return 0


def _cmd_validate(args) -> int:
    rows = read_jsonl(args.manifest)
    store = ImageStore(args.images) if args.images else None
    violations = validate_manifest(rows, store)
    for v in violations:
        location = f" line={v.line}" if v.line is not None else ""
        print(f"{v.kind}{location}: {v.message}")
    if violations:
        print(f"{len(violations)} violations")
        return 4
    print("manifest ok")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synres", description="Synthetic triplet pipeline for referring segmentation"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--workspace", help="workspace directory (default: $SYNRES_WORKSPACE)")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--mock", action="store_true", help="force the mock client suite")

    for stage in STAGE_ORDER:
        p = sub.add_parser(stage, help=f"run pipeline stage {stage}")
        add_common(p)

    p = sub.add_parser("run", help="run a chain of stages")
    add_common(p)
    p.add_argument(
        "--stages",
        default="step1,step2,step3",
        help="comma-separated stage chain (default: all three)",
    )

    p = sub.add_parser("eval", help="score a prediction dump against ground truth")
    p.add_argument("--pred", required=True, help="predictions JSONL (sample_id + mask)")
    p.add_argument("--gt", required=True, help="ground-truth JSONL (sample_id + mask)")
    p.add_argument("--csv", help="write the per-sample report here")

    p = sub.add_parser("stats", help="benchmark manifest statistics")
    add_common(p)
    p.add_argument("--manifest", required=True, help="benchmark manifest JSONL")
    p.add_argument("--cells-csv", help="write per-cell counts here")
    p.add_argument("--attributes-csv", help="write the attribute histogram here")

    p = sub.add_parser("validate", help="validate a dataset manifest")
    p.add_argument("--manifest", required=True, help="manifest JSONL to check")
    p.add_argument("--images", help="images directory for dimension checks")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr
    )
    args = _build_parser().parse_args(argv)
    try:
        if args.command in STAGE_ORDER:
            return _pipeline_command(args, [args.command])
        if args.command == "run":
            stages = [s.strip() for s in args.stages.split(",") if s.strip()]
            return _pipeline_command(args, stages)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "stats":
            return _cmd_stats(args)
        if args.command == "validate":
            return _cmd_validate(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return 2
    except ClientError as exc:
        logger.error("client error: %s", exc)
        return 3
    except SynresError as exc:
        logger.error("data error: %s", exc)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
