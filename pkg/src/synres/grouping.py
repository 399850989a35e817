"""Stage 2: cluster expressions whose pseudo-masks agree and refine the masks.

Expressions become vertices of an undirected graph with an edge wherever the
pairwise mean IoU strictly exceeds tau; connected components are the
consensus groups. Components below the minimum size are discarded, and each
surviving group gets one refined mask per synthetic image by averaging its
members' rasters and re-thresholding.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import ConsensusGroup, DataError, Lineage, SyntheticBatch, TripletRecord
from .maskops import MiouMatrix, average_and_refine, binarize, miou_matrix

logger = logging.getLogger("synres")


@dataclass(frozen=True)
class GroupingConfig:
    tau: float = 0.65
    min_group_size: int = 2

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise DataError("tau must lie strictly between 0 and 1")
        if self.min_group_size < 1:
            raise DataError("min_group_size must be at least 1")


def cluster_expressions(
    matrix: MiouMatrix, config: GroupingConfig
) -> tuple[list[tuple[int, ...]], list[int]]:
    """Partition matrix columns into consensus groups and discards.

    Returns (groups, discarded) where groups are sorted index tuples for the
    connected components of the edge relation entries > tau, keeping only
    components of at least min_group_size members. Every column index lands
    in exactly one of the two outputs.
    """
    adjacency = matrix.entries > config.tau
    np.fill_diagonal(adjacency, False)
    seen = np.zeros(matrix.n, dtype=bool)
    groups: list[tuple[int, ...]] = []
    discarded: list[int] = []
    for start in range(matrix.n):
        if seen[start]:
            continue
        seen[start] = True
        stack = [start]
        component = []
        while stack:
            v = stack.pop()
            component.append(v)
            for u in np.flatnonzero(adjacency[v]):
                if not seen[u]:
                    seen[u] = True
                    stack.append(int(u))
        component.sort()
        if len(component) >= config.min_group_size:
            groups.append(tuple(component))
        else:
            discarded.extend(component)
    groups.sort()
    discarded.sort()
    return groups, discarded


def consensus_masks(
    batch: SyntheticBatch, groups, threshold: float = 0.5
) -> list[ConsensusGroup]:
    """Populate refined masks for each group skeleton (member column indices)."""
    out = []
    for k, members in enumerate(groups):
        if any(j < 0 or j >= batch.n for j in members):
            raise DataError(f"group {k} references an unknown expression column")
        refined = tuple(
            average_and_refine([batch.pseudo_masks[i][j] for j in members], threshold)
            for i in range(batch.m)
        )
        out.append(
            ConsensusGroup(
                group_id=f"{batch.target_id}:g{k}",
                member_expression_ids=frozenset(batch.expressions[j].id for j in members),
                refined_masks=refined,
            )
        )
    return out


def group_batch(batch: SyntheticBatch, config: GroupingConfig, threshold: float = 0.5):
    """Full grouping pass; returns (groups, group_objects, discarded).

    Columns whose binarized masks are empty on every image are discarded up
    front; with zero-policy IoU they could never clear a positive tau anyway.
    """
    live = [
        j
        for j in range(batch.n)
        if any(binarize(batch.pseudo_masks[i][j], threshold).area > 0 for i in range(batch.m))
    ]
    pre_discarded = [j for j in range(batch.n) if j not in live]
    if not live:
        return [], [], sorted(pre_discarded)
    sub_grid = [[row[j] for j in live] for row in batch.pseudo_masks]
    matrix = miou_matrix(sub_grid, threshold=threshold)
    sub_groups, sub_discarded = cluster_expressions(matrix, config)
    groups = [tuple(live[j] for j in g) for g in sub_groups]
    discarded = sorted(pre_discarded + [live[j] for j in sub_discarded])
    return groups, consensus_masks(batch, groups, threshold), discarded


def run_step2(
    batch: SyntheticBatch, config: GroupingConfig, threshold: float = 0.5
) -> list[TripletRecord]:
    """Emit one triplet per (group member, image) pair with the refined mask."""
    groups, group_objects, discarded = group_batch(batch, config, threshold)
    records = []
    for members, group in zip(groups, group_objects):
        for j in members:
            for i in range(batch.m):
                records.append(
                    TripletRecord(
                        image_ref=batch.images[i].ref,
                        expression_text=batch.expressions[j].text,
                        mask=group.refined_masks[i],
                        source="synthetic",
                        lineage=Lineage(
                            target_id=batch.target_id,
                            group_id=group.group_id,
                            seed=batch.images[i].seed,
                        ),
                    )
                )
    logger.debug(
        "stage=step2 target=%s groups=%d discarded=%d records=%d",
        batch.target_id,
        len(groups),
        len(discarded),
        len(records),
    )
    return records
