"""Subset draws from scored clusters: greedy (QOCS), softmax-weighted (QWCS), random.

Cluster scores are the proxy Shapley values; QWCS converts them to cluster
probabilities through exp(f * S) with the usual max-subtraction guard.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .clustering import ClusterModel
from .dataset import EmbeddedDataset, SelectionResult
from .errors import EmptyActiveSet, TargetTooLarge


class SamplingMethod(Enum):
    QOCS = "QOCS"
    QWCS = "QWCS"
    RANDOM = "RANDOM"


@dataclass(frozen=True)
class SamplingConfig:
    method: SamplingMethod
    target_size: int
    scaling_factor: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.target_size < 1:
            raise ValueError("target_size must be >= 1")
        if not np.isfinite(self.scaling_factor):
            raise ValueError("scaling_factor must be finite")


@dataclass
class ClusterScoreTable:
    """Per-cluster quality scores plus members ordered by distance to centroid."""

    scores: np.ndarray
    members: list[np.ndarray]
    ids: list[str]
    source_digest: int

    @property
    def num_clusters(self) -> int:
        return len(self.members)

    @property
    def count(self) -> int:
        return len(self.ids)


def build_score_table(
    dataset: EmbeddedDataset, model: ClusterModel, scores: Sequence[float]
) -> ClusterScoreTable:
    """Attach proxy scores to clusters; member rows sorted by (distance asc, row asc)."""
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (model.num_clusters,):
        raise ValueError(
            f"expected {model.num_clusters} scores, got shape {scores.shape}"
        )
    x = dataset.embeddings.astype(np.float64)
    members: list[np.ndarray] = []
    for cluster in range(model.num_clusters):
        rows = np.flatnonzero(model.assignments == cluster)
        d2 = ((x[rows] - model.centroids[cluster]) ** 2).sum(axis=1)
        members.append(rows[np.argsort(d2, kind="stable")])
    return ClusterScoreTable(
        scores=scores,
        members=members,
        ids=dataset.ids(),
        source_digest=dataset.digest,
    )


def cluster_probabilities(
    scores: Sequence[float], scaling_factor: float, active: Sequence[int]
) -> np.ndarray:
    """Softmax selection probabilities exp(f*S_i) / sum over the active clusters.

    Inactive clusters get probability 0. Overflow-safe via max subtraction.
    """
    scores = np.asarray(scores, dtype=float)
    active = np.asarray(active, dtype=np.int64)
    if active.size == 0:
        raise EmptyActiveSet("no active clusters to sample from")
    z = scaling_factor * scores[active]
    z = z - z.max()
    e = np.exp(z)
    probs = np.zeros(scores.shape[0])
    probs[active] = e / e.sum()
    return probs


def qocs_sample(table: ClusterScoreTable, config: SamplingConfig) -> SelectionResult:
    """Greedy draw: clusters by descending score (ties: lower index), members by
    ascending distance to centroid. Fully deterministic; the seed is only echoed."""
    _check_target(table, config.target_size)
    order = np.lexsort((np.arange(table.num_clusters), -table.scores))
    picked: list[int] = []
    for cluster in order:
        remaining = config.target_size - len(picked)
        if remaining <= 0:
            break
        picked.extend(table.members[cluster][:remaining].tolist())
    return SelectionResult(
        selected_ids=tuple(table.ids[row] for row in picked),
        method=SamplingMethod.QOCS.value,
        target_size=config.target_size,
        seed=config.seed,
        source_digest=table.source_digest,
    )


def qwcs_sample(table: ClusterScoreTable, config: SamplingConfig) -> SelectionResult:
    """Probabilistic draw: a cluster via the softmax over non-exhausted clusters,
    then one not-yet-selected member uniformly; exhausted clusters drop out and
    the remaining probabilities renormalize."""
    _check_target(table, config.target_size)
    rng = np.random.default_rng(config.seed)
    remaining = [list(rows) for rows in table.members]
    picked: list[int] = []
    for _ in range(config.target_size):
        active = [c for c in range(table.num_clusters) if remaining[c]]
        probs = cluster_probabilities(table.scores, config.scaling_factor, active)
        cluster = int(rng.choice(table.num_clusters, p=probs))
        j = int(rng.integers(len(remaining[cluster])))
        picked.append(remaining[cluster].pop(j))
    return SelectionResult(
        selected_ids=tuple(table.ids[row] for row in picked),
        method=SamplingMethod.QWCS.value,
        target_size=config.target_size,
        seed=config.seed,
        source_digest=table.source_digest,
        scaling_factor=config.scaling_factor,
    )


def random_sample(table: ClusterScoreTable, config: SamplingConfig) -> SelectionResult:
    """Uniform draw without replacement, in draw order; the in-repo baseline."""
    _check_target(table, config.target_size)
    rng = np.random.default_rng(config.seed)
    rows = rng.permutation(table.count)[: config.target_size]
    return SelectionResult(
        selected_ids=tuple(table.ids[row] for row in rows),
        method=SamplingMethod.RANDOM.value,
        target_size=config.target_size,
        seed=config.seed,
        source_digest=table.source_digest,
    )


_SAMPLERS = {
    SamplingMethod.QOCS: qocs_sample,
    SamplingMethod.QWCS: qwcs_sample,
    SamplingMethod.RANDOM: random_sample,
}


def sample(table: ClusterScoreTable, config: SamplingConfig) -> SelectionResult:
    return _SAMPLERS[config.method](table, config)


def _check_target(table: ClusterScoreTable, target_size: int) -> None:
    if target_size > table.count:
        raise TargetTooLarge(
            f"target_size {target_size} exceeds dataset size {table.count}"
        )
