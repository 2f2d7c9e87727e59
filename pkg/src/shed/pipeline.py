"""End-to-end orchestration: load, cluster, score, sample, export, manifest.

A single global seed deterministically derives every module seed, so a run
is a pure function of its configuration and input files.
"""

from __future__ import annotations

import hashlib
import json
import platform
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np
import scipy

from . import __version__ as _shed_version
from .clustering import ClusterConfig, kmeans_fit, select_proxies
from .dataset import (
    EmbeddedDataset,
    export_selection,
    fnv1a64_file,
    load_embeddings,
)
from .errors import ConfigError, StageError
from .sampling import (
    ClusterScoreTable,
    SamplingConfig,
    SamplingMethod,
    build_score_table,
    sample,
)
from .valuation import (
    ShapleyConfig,
    ValueFunctionSpec,
    ValueKind,
    approximate_shapley,
    default_group_size,
)

SCORE_TABLE_FORMAT = "shed-cluster-scores v1"


def derive_seed(global_seed: int, stage: str) -> int:
    """Stable per-stage seed stream: low 8 bytes of sha256(seed:stage)."""
    digest = hashlib.sha256(f"{global_seed}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class RunConfig:
    """Everything a full run needs; mirrors the config-file sections."""

    embeddings_path: Path
    records_path: Path
    out_path: Path
    value: ValueFunctionSpec
    target_size: int
    seed: int = 0
    normalize: bool = False
    clusters: int | None = None
    max_iterations: int = 100
    rel_sse_tolerance: float = 1e-6
    group_size: int | None = None
    iterations: int = 10
    method: SamplingMethod = SamplingMethod.QOCS
    scaling_factor: float = 1.0

    def __post_init__(self) -> None:
        if self.target_size < 1:
            raise ConfigError("sampling.target_size must be >= 1")
        if self.iterations < 1:
            raise ConfigError("shapley.iterations must be >= 1")

    def echo(self) -> dict[str, Any]:
        """JSON-friendly snapshot of the effective configuration."""
        value: dict[str, Any] = {
            "kind": self.value.kind.value,
            "empty_subset_value": self.value.empty_subset_value,
            "timeout": self.value.timeout,
            "max_parallel_invocations": self.value.max_parallel_invocations,
        }
        if self.value.kind is ValueKind.EXTERNAL_COMMAND:
            value["command"] = list(self.value.command)
        else:
            value["builtin"] = self.value.builtin_name
        return {
            "paths": {
                "embeddings": str(self.embeddings_path),
                "records": str(self.records_path),
                "out": str(self.out_path),
            },
            "seed": self.seed,
            "normalize": self.normalize,
            "cluster": {
                "clusters": self.clusters,
                "max_iterations": self.max_iterations,
                "tolerance": self.rel_sse_tolerance,
            },
            "shapley": {
                "group_size": self.group_size,
                "iterations": self.iterations,
            },
            "value": value,
            "sampling": {
                "method": self.method.value,
                "target_size": self.target_size,
                "scaling_factor": self.scaling_factor,
            },
        }


@dataclass
class RunManifest:
    config: dict[str, Any]
    dataset_digest: str
    stage_seconds: dict[str, float]
    evaluations_used: int
    num_clusters: int
    score_table_digest: str
    selection_digest: str
    selection_path: str
    score_table_path: str
    versions: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def resolve_value_spec(spec: ValueFunctionSpec, dataset: EmbeddedDataset) -> ValueFunctionSpec:
    """Fill dataset-derived builtin parameters (weights, group maps, dev split).

    External commands pass through untouched.
    """
    if spec.kind is not ValueKind.BUILTIN:
        return spec
    params = dict(spec.builtin_params)
    name = spec.builtin_name

    if name == "ADDITIVE" and params.get("weights_from_label"):
        weights: dict[str, float] = {}
        for rec in dataset.records:
            if rec.label is None:
                raise ConfigError(f"record {rec.id!r} has no label to use as weight")
            try:
                weights[rec.id] = float(rec.label)
            except ValueError:
                raise ConfigError(
                    f"record {rec.id!r} label {rec.label!r} is not numeric"
                ) from None
        params.pop("weights_from_label")
        params["weights"] = weights

    elif name == "DEMOGRAPHIC_PARITY" and "group_of" not in params:
        group_of = {rec.id: rec.group_label for rec in dataset.records}
        label_of = {rec.id: rec.label for rec in dataset.records}
        groups = sorted({g for g in group_of.values() if g is not None})
        params.setdefault("positive_label", "1")
        if "group_a" not in params or "group_b" not in params:
            if len(groups) < 2:
                raise ConfigError(
                    "demographic parity needs two group labels in the records"
                )
            params.setdefault("group_a", groups[0])
            params.setdefault("group_b", groups[1])
        params["group_of"] = group_of
        params["label_of"] = label_of

    elif name == "NEAREST_CENTROID" and "train_matrix" not in params:
        dev_emb = params.pop("dev_embeddings", None)
        dev_rec = params.pop("dev_records", None)
        if dev_emb is None or dev_rec is None:
            raise ConfigError(
                "nearest-centroid value function needs dev_embeddings and dev_records"
            )
        dev = load_embeddings(dev_emb, dev_rec)
        labels = []
        for rec in dataset.records:
            if rec.label is None:
                raise ConfigError(f"record {rec.id!r} has no label for nearest-centroid")
            labels.append(rec.label)
        dev_labels = []
        for rec in dev.records:
            if rec.label is None:
                raise ConfigError(f"dev record {rec.id!r} has no label")
            dev_labels.append(rec.label)
        params["train_index"] = {rec.id: i for i, rec in enumerate(dataset.records)}
        params["train_matrix"] = dataset.embeddings.astype(np.float64)
        params["train_labels"] = np.array(labels)
        params["dev_matrix"] = dev.embeddings.astype(np.float64)
        params["dev_labels"] = np.array(dev_labels)

    return ValueFunctionSpec(
        kind=spec.kind,
        builtin_name=name,
        builtin_params=params,
        empty_subset_value=spec.empty_subset_value,
        timeout=spec.timeout,
        max_parallel_invocations=spec.max_parallel_invocations,
    )


def write_score_table(table: ClusterScoreTable, proxy_ids: list[str], path: Path) -> None:
    lines = [f"# {SCORE_TABLE_FORMAT}", f"# source_digest={table.source_digest:016x}"]
    lines.append("cluster\tscore\tproxy_id\tsize")
    for c in range(table.num_clusters):
        lines.append(
            f"{c}\t{float(table.scores[c])!r}\t{proxy_ids[c]}\t{len(table.members[c])}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_pipeline(config: RunConfig) -> RunManifest:
    """Execute load -> cluster -> proxies -> shapley -> score table -> sample -> export.

    On a stage failure every partially written output is removed and a
    StageError naming the stage is raised.
    """
    timings: dict[str, float] = {}
    written: list[Path] = []

    @contextmanager
    def stage(name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        except Exception as exc:
            for path in written:
                path.unlink(missing_ok=True)
            raise StageError(name, exc) from exc
        timings[name] = time.perf_counter() - start

    with stage("load"):
        dataset = load_embeddings(
            config.embeddings_path, config.records_path, normalize=config.normalize
        )

    with stage("cluster"):
        model = kmeans_fit(
            dataset,
            ClusterConfig(
                num_clusters=config.clusters,
                max_iterations=config.max_iterations,
                rel_sse_tolerance=config.rel_sse_tolerance,
                seed=derive_seed(config.seed, "cluster"),
            ),
        )

    with stage("proxies"):
        model = select_proxies(dataset, model)
        proxy_ids = [dataset.records[int(r)].id for r in model.proxy_rows()]

    with stage("shapley"):
        spec = resolve_value_spec(config.value, dataset)
        group_size = (
            config.group_size
            if config.group_size is not None
            else default_group_size(model.num_clusters)
        )
        scores = approximate_shapley(
            spec,
            proxy_ids,
            ShapleyConfig(
                group_size=group_size,
                iterations=config.iterations,
                seed=derive_seed(config.seed, "shapley"),
            ),
        )

    with stage("score_table"):
        table = build_score_table(dataset, model, scores.scores)

    with stage("sample"):
        selection = sample(
            table,
            SamplingConfig(
                method=config.method,
                target_size=config.target_size,
                scaling_factor=config.scaling_factor,
                seed=derive_seed(config.seed, "sampling"),
            ),
        )

    out = Path(config.out_path)
    scores_path = out.parent / (out.name + ".scores.txt")
    manifest_path = out.parent / (out.name + ".manifest.json")
    with stage("export"):
        out.parent.mkdir(parents=True, exist_ok=True)
        written.append(out)
        export_selection(dataset, selection, out)
        written.append(scores_path)
        write_score_table(table, proxy_ids, scores_path)

    manifest = RunManifest(
        config=config.echo(),
        dataset_digest=f"{dataset.digest:016x}",
        stage_seconds=timings,
        evaluations_used=scores.evaluations_used,
        num_clusters=model.num_clusters,
        score_table_digest=f"{fnv1a64_file(scores_path):016x}",
        selection_digest=f"{fnv1a64_file(out):016x}",
        selection_path=str(out),
        score_table_path=str(scores_path),
        versions={
            "shed": _shed_version,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    )
    try:
        manifest_path.write_text(manifest.to_json() + "\n", encoding="utf-8")
    except OSError as exc:
        for path in written:
            path.unlink(missing_ok=True)
        raise StageError("manifest", exc) from exc
    return manifest
