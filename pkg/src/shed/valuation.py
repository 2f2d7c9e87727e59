"""Value functions and Shapley scoring for proxy instances.

A value function maps an ordered subset of instance ids to one finite real.
It is either an external command speaking a stdin/stdout protocol, or one of
the built-in synthetic games used as oracles. On top of it sit two scorers:
exact enumeration for small player sets, and the iterative group-removal
estimator used for real runs.
"""

from __future__ import annotations

import math
import os
import subprocess
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import (
    CommandFailed,
    InvalidGroupSize,
    MalformedScore,
    MissingGroupLabel,
    Timeout,
    TooLargeForExact,
)

EXACT_PLAYER_LIMIT = 20
RUN_ID_ENV = "SHED_RUN_ID"


class ValueKind(Enum):
    EXTERNAL_COMMAND = "external_command"
    BUILTIN = "builtin"


@dataclass(frozen=True)
class ValueFunctionSpec:
    """How v(P) is computed for a subset P of instance ids.

    ``empty_subset_value`` is the declared constant v of the empty set; it is
    returned directly and the underlying oracle is never invoked on an empty
    subset.
    """

    kind: ValueKind
    command: tuple[str, ...] = ()
    builtin_name: str = ""
    builtin_params: Mapping[str, Any] = field(default_factory=dict)
    empty_subset_value: float = 0.0
    timeout: float = 600.0
    max_parallel_invocations: int = 1

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_parallel_invocations < 1:
            raise ValueError("max_parallel_invocations must be >= 1")
        if self.kind is ValueKind.EXTERNAL_COMMAND and not self.command:
            raise ValueError("external value function needs a command vector")
        if self.kind is ValueKind.BUILTIN and self.builtin_name not in BUILTIN_GAMES:
            raise ValueError(f"unknown builtin {self.builtin_name!r}")

    @classmethod
    def external(cls, command: Sequence[str], **kwargs: Any) -> "ValueFunctionSpec":
        return cls(kind=ValueKind.EXTERNAL_COMMAND, command=tuple(command), **kwargs)

    @classmethod
    def builtin(
        cls, name: str, params: Mapping[str, Any] | None = None, **kwargs: Any
    ) -> "ValueFunctionSpec":
        return cls(
            kind=ValueKind.BUILTIN,
            builtin_name=name,
            builtin_params=dict(params or {}),
            **kwargs,
        )


# ---------------------------------------------------------------------------
# built-in games


def _additive(params: Mapping[str, Any], subset: Sequence[str]) -> float:
    weights = params["weights"]
    try:
        return math.fsum(weights[i] for i in subset)
    except KeyError as exc:
        raise ValueError(f"additive oracle has no weight for id {exc.args[0]!r}") from exc


def _cardinality(params: Mapping[str, Any], subset: Sequence[str]) -> float:
    return float(len(subset)) ** float(params["exponent"])


def _glove(params: Mapping[str, Any], subset: Sequence[str]) -> float:
    members = set(subset)
    rights = set(params["rights"])
    return 1.0 if params["left"] in members and members & rights else 0.0


def _pair_synergy(params: Mapping[str, Any], subset: Sequence[str]) -> float:
    members = set(subset)
    total = math.fsum(params["weights"][i] for i in subset)
    bonus = math.fsum(
        b for a, c, b in params["pairs"] if a in members and c in members
    )
    return total + bonus


def _demographic_parity(params: Mapping[str, Any], subset: Sequence[str]) -> float:
    """Negative absolute gap in positive-label rates between two groups."""
    group_of = params["group_of"]
    label_of = params["label_of"]
    positive = params["positive_label"]
    group_a = params["group_a"]
    group_b = params["group_b"]
    counts = {group_a: 0, group_b: 0}
    positives = {group_a: 0, group_b: 0}
    for i in subset:
        group = group_of.get(i)
        label = label_of.get(i)
        if group is None or label is None:
            raise MissingGroupLabel(f"id {i!r} lacks group/label data")
        if group not in counts:
            continue
        counts[group] += 1
        if label == positive:
            positives[group] += 1
    rate_a = positives[group_a] / counts[group_a] if counts[group_a] else 0.0
    rate_b = positives[group_b] / counts[group_b] if counts[group_b] else 0.0
    return -abs(rate_a - rate_b)


def _table(params: Mapping[str, Any], subset: Sequence[str]) -> float:
    return float(params["table"][frozenset(subset)])


def _nearest_centroid(params: Mapping[str, Any], subset: Sequence[str]) -> float:
    """Accuracy on a dev split of a nearest-centroid classifier trained on the subset.

    Params: ``train_index`` (id to row), ``train_matrix``, ``train_labels``,
    ``dev_matrix``, ``dev_labels``. Prediction ties go to the class that
    sorts first.
    """
    index = params["train_index"]
    rows = [index[i] for i in subset]
    x = params["train_matrix"][rows]
    y = params["train_labels"][rows]
    dev_x = params["dev_matrix"]
    dev_y = params["dev_labels"]
    classes = np.unique(y)
    centroids = np.stack([x[y == c].mean(axis=0) for c in classes])
    d2 = (
        (dev_x * dev_x).sum(axis=1)[:, None]
        - 2.0 * np.einsum("nd,cd->nc", dev_x, centroids)
        + (centroids * centroids).sum(axis=1)[None, :]
    )
    pred = classes[np.argmin(d2, axis=1)]
    return float(np.mean(pred == dev_y))


BUILTIN_GAMES = {
    "ADDITIVE": _additive,
    "CARDINALITY": _cardinality,
    "GLOVE": _glove,
    "PAIR_SYNERGY": _pair_synergy,
    "DEMOGRAPHIC_PARITY": _demographic_parity,
    "TABLE": _table,
    "NEAREST_CENTROID": _nearest_centroid,
}


def builtin_value(name: str, params: Mapping[str, Any], subset: Sequence[str]) -> float:
    """Evaluate one built-in game directly."""
    return BUILTIN_GAMES[name](params, list(subset))


# ---------------------------------------------------------------------------
# evaluation


def evaluate_value(spec: ValueFunctionSpec, subset_ids: Sequence[str]) -> float:
    """Compute v(P) for an ordered id subset; the empty set is the declared constant."""
    ids = list(subset_ids)
    if not ids:
        return float(spec.empty_subset_value)
    if spec.kind is ValueKind.BUILTIN:
        value = float(BUILTIN_GAMES[spec.builtin_name](spec.builtin_params, ids))
    else:
        value = _invoke_command(spec, ids)
    if not math.isfinite(value):
        raise MalformedScore(f"value function returned non-finite {value!r}")
    return value


def _invoke_command(spec: ValueFunctionSpec, ids: list[str]) -> float:
    payload = "".join(f"{i}\n" for i in ids).encode("utf-8")
    env = dict(os.environ)
    env[RUN_ID_ENV] = uuid.uuid4().hex
    try:
        proc = subprocess.run(
            list(spec.command),
            input=payload,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            timeout=spec.timeout,
            env=env,
        )
    except subprocess.TimeoutExpired as exc:
        raise Timeout(f"value command exceeded {spec.timeout}s") from exc
    except OSError as exc:
        raise CommandFailed(f"cannot run {spec.command[0]!r}: {exc}") from exc
    if proc.returncode != 0:
        detail = proc.stderr.decode("utf-8", errors="replace").strip()[-500:]
        raise CommandFailed(
            f"value command exited {proc.returncode}" + (f": {detail}" if detail else "")
        )
    tokens = proc.stdout.decode("utf-8", errors="replace").split()
    if len(tokens) != 1:
        raise MalformedScore(f"expected one real on stdout, got {tokens[:5]!r}")
    try:
        value = float(tokens[0])
    except ValueError:
        raise MalformedScore(f"cannot parse score {tokens[0]!r}") from None
    return value


# ---------------------------------------------------------------------------
# exact Shapley (enumeration oracle)


def exact_shapley(spec: ValueFunctionSpec, ids: Sequence[str]) -> np.ndarray:
    """Shapley values by full subset enumeration; refuses more than 20 players.

    Equals the average marginal contribution over all arrival orders; the
    scores satisfy sum(S) = v(all) - v(empty) up to float rounding.
    """
    players = list(ids)
    m = len(players)
    if m > EXACT_PLAYER_LIMIT:
        raise TooLargeForExact(f"{m} players exceeds the limit of {EXACT_PLAYER_LIMIT}")
    if m == 0:
        return np.zeros(0)

    values = np.empty(1 << m)
    for mask in range(1 << m):
        subset = [players[j] for j in range(m) if mask >> j & 1]
        values[mask] = evaluate_value(spec, subset)

    masks = np.arange(1 << m)
    popcount = np.zeros(1 << m, dtype=np.int64)
    for j in range(m):
        popcount += masks >> j & 1
    # weight of a coalition P not containing i: |P|! (m-|P|-1)! / m!
    size_weight = np.array([1.0 / (m * math.comb(m - 1, s)) for s in range(m)])

    scores = np.empty(m)
    for j in range(m):
        bit = 1 << j
        without = masks[(masks & bit) == 0]
        diffs = values[without | bit] - values[without]
        scores[j] = float(np.sum(size_weight[popcount[without]] * diffs))
    return scores


# ---------------------------------------------------------------------------
# group-removal estimator


@dataclass(frozen=True)
class ShapleyConfig:
    """Estimator knobs: group size n, iteration count k, RNG seed."""

    group_size: int
    iterations: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.group_size < 1:
            raise InvalidGroupSize(f"group_size must be >= 1, got {self.group_size}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")


@dataclass
class ShapleyScores:
    """Per-proxy estimates plus the diagnostics needed to audit a run."""

    scores: np.ndarray
    per_iteration_contributions: np.ndarray
    value_full: float
    value_empty: float
    evaluations_used: int


def default_group_size(num_clusters: int) -> int:
    """Default n: one fiftieth of the cluster count, at least 1."""
    return max(1, round(num_clusters / 50))


def _removal_chain(
    spec: ValueFunctionSpec, proxies: list[str], perm: np.ndarray, n: int
) -> tuple[np.ndarray, float, float]:
    """One full removal pass; returns per-proxy contributions and (v_full, v_empty)."""
    m = len(proxies)
    alive = np.ones(m, dtype=bool)
    contribs = np.empty(m)

    def current() -> list[str]:
        return [proxies[i] for i in range(m) if alive[i]]

    v_prev = evaluate_value(spec, current())
    v_full = v_prev
    for start in range(0, m, n):
        group = perm[start : start + n]
        alive[group] = False
        v_next = evaluate_value(spec, current())
        diff = v_prev - v_next
        contribs[group] = diff / len(group)
        v_prev = v_next
    return contribs, v_full, v_prev


def approximate_shapley(
    spec: ValueFunctionSpec,
    proxies: Sequence[str],
    config: ShapleyConfig,
) -> ShapleyScores:
    """Estimate proxy Shapley values by iterative group removal.

    Each iteration draws an independent seeded permutation of the proxies,
    chunks it into consecutive groups of ``group_size`` (the final group may
    be smaller), and walks the removal chain from the full set down to the
    empty set; a group's value drop is shared equally among its members.
    Scores are the running mean of the per-iteration contributions, so the
    group contributions of every iteration telescope exactly to
    v(full) - v(empty).

    Deterministic for a fixed seed, independent of the parallelism degree:
    permutations are pre-drawn and each chain is fully sequential.
    """
    proxies = list(proxies)
    m = len(proxies)
    if m == 0:
        raise InvalidGroupSize("proxy set is empty")
    n = config.group_size
    if n > m:
        raise InvalidGroupSize(f"group_size {n} exceeds {m} proxies")
    k = config.iterations

    rng = np.random.default_rng(config.seed)
    perms = [rng.permutation(m) for _ in range(k)]

    workers = min(k, spec.max_parallel_invocations)
    if spec.kind is ValueKind.EXTERNAL_COMMAND and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda p: _removal_chain(spec, proxies, p, n), perms))
    else:
        results = [_removal_chain(spec, proxies, p, n) for p in perms]

    rows = np.stack([r[0] for r in results])
    means = np.zeros(m)
    for t, row in enumerate(rows, start=1):
        # running mean: exact when all iterates are identical
        means += (row - means) / t

    groups_per_iteration = -(-m // n)  # ceil
    return ShapleyScores(
        scores=means,
        per_iteration_contributions=rows,
        value_full=results[0][1],
        value_empty=results[0][2],
        # one oracle invocation per group per iteration, plus the single
        # constant resolution of v(empty)
        evaluations_used=k * groups_per_iteration + 1,
    )
