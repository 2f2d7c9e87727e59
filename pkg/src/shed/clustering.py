"""Lloyd k-means over embedding rows plus per-cluster proxy selection.

The implementation is deliberately in-repo rather than delegated: the
contract requires per-iteration SSE monotonicity, sticky tie-breaking, a
specific empty-cluster repair rule, and bit-reproducible results for a fixed
seed, none of which an off-the-shelf estimator exposes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .dataset import EmbeddedDataset
from .errors import IoFailure, TooManyClusters

_CHUNK_ROWS = 8192


@dataclass(frozen=True)
class ClusterConfig:
    """K-means parameters; ``num_clusters=None`` defaults to round(3*sqrt(N))."""

    num_clusters: int | None = None
    max_iterations: int = 100
    rel_sse_tolerance: float = 1e-6
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_clusters is not None and self.num_clusters < 1:
            raise ValueError("num_clusters must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.rel_sse_tolerance <= 0:
            raise ValueError("rel_sse_tolerance must be positive")


def default_num_clusters(count: int) -> int:
    return max(1, min(count, round(3.0 * math.sqrt(count))))


@dataclass
class ClusterModel:
    """Fitted model: centroids, per-row assignments, per-cluster proxy rows, total SSE."""

    centroids: np.ndarray
    assignments: np.ndarray
    sse: float
    seed: int
    proxy_index: np.ndarray | None = None
    sse_history: list[float] | None = None

    @property
    def num_clusters(self) -> int:
        return int(self.centroids.shape[0])

    def proxy_rows(self) -> np.ndarray:
        if self.proxy_index is None:
            raise ValueError("proxies not selected yet; call select_proxies")
        return self.proxy_index


def _sq_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Exact squared euclidean distances, chunked; no threaded BLAS involved."""
    out = np.empty((x.shape[0], centroids.shape[0]))
    for start in range(0, x.shape[0], _CHUNK_ROWS):
        stop = min(start + _CHUNK_ROWS, x.shape[0])
        out[start:stop] = cdist(x[start:stop], centroids, "sqeuclidean")
    return out


def _kmeanspp_init(x: np.ndarray, c: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((c, x.shape[1]))
    chosen = np.zeros(n, dtype=bool)
    first = int(rng.integers(n))
    centroids[0] = x[first]
    chosen[first] = True
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, c):
        total = float(d2.sum())
        if total > 0.0:
            pick = int(rng.choice(n, p=d2 / total))
        else:
            # all remaining mass sits on already-chosen points (duplicates);
            # fall back to the lowest-index unchosen row
            pick = int(np.flatnonzero(~chosen)[0])
        centroids[j] = x[pick]
        chosen[pick] = True
        d2 = np.minimum(d2, ((x - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _assign(
    d2: np.ndarray, previous: np.ndarray | None
) -> np.ndarray:
    """Argmin assignment; on exact ties a row keeps its previous cluster."""
    best = np.argmin(d2, axis=1)
    if previous is None:
        return best
    rows = np.arange(d2.shape[0])
    keep = d2[rows, previous] <= d2[rows, best]
    best[keep] = previous[keep]
    return best


def _repair_empty(
    x: np.ndarray, d2: np.ndarray, assignments: np.ndarray, c: int
) -> bool:
    """Move one point into each empty cluster: the point farthest from that
    cluster's current centroid, drawn from clusters that keep >= 2 members.
    Returns True when any repair happened."""
    counts = np.bincount(assignments, minlength=c)
    repaired = False
    for empty in np.flatnonzero(counts == 0):
        donors = np.flatnonzero(counts[assignments] > 1)
        distances = d2[donors, empty]
        p = int(donors[int(np.argmax(distances))])
        counts[assignments[p]] -= 1
        counts[empty] += 1
        assignments[p] = empty
        repaired = True
    return repaired


def _means(x: np.ndarray, assignments: np.ndarray, c: int) -> np.ndarray:
    sums = np.zeros((c, x.shape[1]))
    np.add.at(sums, assignments, x)
    counts = np.bincount(assignments, minlength=c).astype(float)
    return sums / counts[:, None]


def _total_sse(x: np.ndarray, centroids: np.ndarray, assignments: np.ndarray) -> float:
    diffs = x - centroids[assignments]
    return float(np.einsum("nd,nd->", diffs, diffs))


def kmeans_fit(dataset: EmbeddedDataset, config: ClusterConfig) -> ClusterModel:
    """Fit Lloyd k-means with k-means++ seeding.

    Stops when assignments reach a fixed point, when the relative SSE
    improvement drops below the tolerance, or at ``max_iterations``. A final
    consistency pass re-derives assignments against the returned centroids,
    so the reported SSE is exactly the recomputed within-cluster SSE and
    every cluster is non-empty. Deterministic for a fixed seed.
    """
    x = dataset.embeddings.astype(np.float64)
    n = x.shape[0]
    c = config.num_clusters if config.num_clusters is not None else default_num_clusters(n)
    if c > n:
        raise TooManyClusters(f"{c} clusters requested for {n} instances")

    rng = np.random.default_rng(config.seed)
    centroids = _kmeanspp_init(x, c, rng)
    assignments: np.ndarray | None = None
    history: list[float] = []
    prev_sse = math.inf

    for _ in range(config.max_iterations):
        d2 = _sq_distances(x, centroids)
        new_assignments = _assign(d2, assignments)
        repaired = _repair_empty(x, d2, new_assignments, c)
        changed = assignments is None or bool(
            (new_assignments != assignments).any()
        )
        assignments = new_assignments
        centroids = _means(x, assignments, c)
        sse = _total_sse(x, centroids, assignments)
        history.append(sse)
        if not changed and not repaired:
            break
        if math.isfinite(prev_sse) and prev_sse - sse <= config.rel_sse_tolerance * prev_sse:
            break
        prev_sse = sse

    # consistency pass: labels against the final centroids
    d2 = _sq_distances(x, centroids)
    final = _assign(d2, assignments)
    _repair_empty(x, d2, final, c)
    sse = _total_sse(x, centroids, final)
    if not history or sse != history[-1]:
        history.append(sse)

    return ClusterModel(
        centroids=centroids,
        assignments=final,
        sse=sse,
        seed=config.seed,
        sse_history=history,
    )


def select_proxies(dataset: EmbeddedDataset, model: ClusterModel) -> ClusterModel:
    """Pick each cluster's centroid-nearest member row (ties: lowest row index)."""
    x = dataset.embeddings.astype(np.float64)
    c = model.num_clusters
    proxy = np.empty(c, dtype=np.int64)
    for cluster in range(c):
        rows = np.flatnonzero(model.assignments == cluster)
        if rows.size == 0:
            raise ValueError(f"cluster {cluster} is empty")
        d2 = ((x[rows] - model.centroids[cluster]) ** 2).sum(axis=1)
        proxy[cluster] = rows[int(np.argmin(d2))]
    return replace(model, proxy_index=proxy)


# ---------------------------------------------------------------------------
# text dump, for debugging and golden tests


def dump_cluster_model(model: ClusterModel, path: Path | str) -> None:
    """Write ``C d seed sse``, centroid rows, the assignment list, the proxy list."""
    c, d = model.centroids.shape
    lines = [f"{c} {d} {model.seed} {model.sse!r}"]
    for row in model.centroids:
        lines.append(" ".join(repr(float(v)) for v in row))
    lines.append(" ".join(str(int(a)) for a in model.assignments))
    if model.proxy_index is not None:
        lines.append(" ".join(str(int(p)) for p in model.proxy_index))
    else:
        lines.append("-")
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_cluster_model(path: Path | str) -> ClusterModel:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    c_str, d_str, seed_str, sse_str = lines[0].split()
    c, d = int(c_str), int(d_str)
    centroids = np.array(
        [[float(v) for v in lines[1 + i].split()] for i in range(c)]
    ).reshape(c, d)
    assignments = np.array([int(v) for v in lines[1 + c].split()], dtype=np.int64)
    proxy_line = lines[2 + c].strip()
    proxy = (
        None
        if proxy_line == "-"
        else np.array([int(v) for v in proxy_line.split()], dtype=np.int64)
    )
    return ClusterModel(
        centroids=centroids,
        assignments=assignments,
        sse=float(sse_str),
        seed=int(seed_str),
        proxy_index=proxy,
    )
