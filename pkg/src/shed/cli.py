"""Command-line front end.

Subcommands mirror the pipeline stages so each is independently invocable:
``plan``, ``cluster``, ``score``, ``sample``, ``run``, ``exact-shapley``.
Configuration comes from an optional JSON file whose sections mirror
RunConfig; any CLI flag overrides the file value. Exit codes: 0 success,
2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys
from pathlib import Path
from typing import Any, Sequence

from .clustering import (
    ClusterConfig,
    dump_cluster_model,
    kmeans_fit,
    load_cluster_model,
    select_proxies,
)
from .dataset import load_embeddings
from .errors import ConfigError, ShedError, StageError
from .pipeline import (
    RunConfig,
    derive_seed,
    resolve_value_spec,
    run_pipeline,
    write_score_table,
)
from .planner import estimate_theta, format_plan, plan_budget
from .sampling import (
    SamplingConfig,
    SamplingMethod,
    build_score_table,
    sample,
)
from .valuation import (
    ShapleyConfig,
    ValueFunctionSpec,
    approximate_shapley,
    default_group_size,
    exact_shapley,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def _add_dataset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--embeddings", metavar="PATH", help="binary embedding file")
    p.add_argument("--records", metavar="PATH", help="JSONL records file")
    p.add_argument("--normalize", action="store_true", default=None,
                   help="L2-normalize embeddings at load time")


def _add_value_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--value-cmd", metavar="CMD",
                   help="external value-function command (shlex-split)")
    p.add_argument("--builtin", metavar="NAME",
                   help="built-in value function (additive, cardinality, ...)")
    p.add_argument("--builtin-params", metavar="JSON",
                   help="JSON object of built-in parameters")
    p.add_argument("--empty-value", type=float, metavar="V",
                   help="declared v(empty); default 0")
    p.add_argument("--timeout", type=float, metavar="SECONDS")
    p.add_argument("--max-parallel", type=int, metavar="P",
                   help="max concurrent value-function invocations")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shed",
        description="Refine an embedded corpus down to a small high-quality subset.",
    )
    parser.add_argument("--config", metavar="PATH", help="JSON run configuration")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="full pipeline: cluster, score, sample, export")
    _add_dataset_flags(run)
    _add_value_flags(run)
    run.add_argument("--out", metavar="PATH")
    run.add_argument("--clusters", type=int, metavar="C")
    run.add_argument("--group-size", type=int, metavar="N")
    run.add_argument("--iterations", type=int, metavar="K")
    run.add_argument("--method", choices=["qocs", "qwcs", "random"])
    run.add_argument("--target-size", type=int, metavar="M")
    run.add_argument("--scaling-factor", type=float, metavar="F")
    run.add_argument("--seed", type=int, metavar="S")

    plan = sub.add_parser("plan", help="pick (k, C) under a wall-clock budget")
    _add_dataset_flags(plan)
    _add_value_flags(plan)
    plan.add_argument("--budget", type=float, required=True, metavar="T0")
    plan.add_argument("--theta", type=float, metavar="TH",
                      help="seconds per (iteration x cluster); measured when omitted")
    plan.add_argument("--dataset-size", type=int, metavar="N",
                      help="|D| when no dataset files are given")
    plan.add_argument("--lambda1", type=float, default=1.0)
    plan.add_argument("--lambda2", type=float, default=1.0)
    plan.add_argument("--sample-size", type=int, default=2000)
    plan.add_argument("--group-size", type=int, metavar="N")
    plan.add_argument("--seed", type=int, metavar="S")

    cluster = sub.add_parser("cluster", help="fit k-means and dump the cluster model")
    _add_dataset_flags(cluster)
    cluster.add_argument("--clusters", type=int, metavar="C")
    cluster.add_argument("--seed", type=int, metavar="S")
    cluster.add_argument("--out", metavar="PATH", required=True)

    score = sub.add_parser("score", help="cluster and write the cluster score table")
    _add_dataset_flags(score)
    _add_value_flags(score)
    score.add_argument("--clusters", type=int, metavar="C")
    score.add_argument("--group-size", type=int, metavar="N")
    score.add_argument("--iterations", type=int, metavar="K")
    score.add_argument("--seed", type=int, metavar="S")
    score.add_argument("--out", metavar="PATH", required=True,
                       help="prefix: writes PATH.clusters.txt and PATH.scores.txt")

    samp = sub.add_parser("sample", help="draw a selection from an existing score table")
    _add_dataset_flags(samp)
    samp.add_argument("--cluster-model", metavar="PATH", required=True)
    samp.add_argument("--scores", metavar="PATH", required=True)
    samp.add_argument("--method", choices=["qocs", "qwcs", "random"])
    samp.add_argument("--target-size", type=int, required=True, metavar="M")
    samp.add_argument("--scaling-factor", type=float, metavar="F")
    samp.add_argument("--seed", type=int, metavar="S")
    samp.add_argument("--out", metavar="PATH", required=True)

    exact = sub.add_parser("exact-shapley", help="enumeration oracle for small games")
    _add_value_flags(exact)
    exact.add_argument("--ids", metavar="ID[,ID...]", required=True)

    return parser


# ---------------------------------------------------------------------------
# config plumbing


def _load_config_file(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    return obj


def _pick(flag: Any, cfg: dict[str, Any], section: str, key: str, default: Any = None) -> Any:
    """Flag wins, then the config-file section, then the default."""
    if flag is not None:
        return flag
    return cfg.get(section, {}).get(key, default)


def _value_spec_from(args: argparse.Namespace, cfg: dict[str, Any]) -> ValueFunctionSpec:
    section = cfg.get("value", {})
    command = args.value_cmd if args.value_cmd is not None else section.get("command")
    builtin = args.builtin if args.builtin is not None else section.get("builtin")
    if command and builtin:
        raise ConfigError("give either a value command or a builtin, not both")
    if not command and not builtin:
        raise ConfigError("a value function is required (--value-cmd or --builtin)")

    params: dict[str, Any] = dict(section.get("params", {}))
    if args.builtin_params is not None:
        try:
            params.update(json.loads(args.builtin_params))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--builtin-params is not valid JSON: {exc}") from exc

    kwargs: dict[str, Any] = {}
    empty = args.empty_value if args.empty_value is not None else section.get("empty_value")
    if empty is not None:
        kwargs["empty_subset_value"] = float(empty)
    timeout = args.timeout if args.timeout is not None else section.get("timeout")
    if timeout is not None:
        kwargs["timeout"] = float(timeout)
    parallel = (
        args.max_parallel if args.max_parallel is not None else section.get("max_parallel")
    )
    if parallel is not None:
        kwargs["max_parallel_invocations"] = int(parallel)

    try:
        if command:
            argv = shlex.split(command) if isinstance(command, str) else list(command)
            return ValueFunctionSpec.external(argv, **kwargs)
        name = str(builtin).upper()
        if not params and name == "ADDITIVE":
            params = {"weights_from_label": True}
        if not params and name == "CARDINALITY":
            params = {"exponent": 1.0}
        return ValueFunctionSpec.builtin(name, params, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _require(value: Any, what: str) -> Any:
    if value is None:
        raise ConfigError(f"{what} is required")
    return value


def _run_config_from(args: argparse.Namespace, cfg: dict[str, Any]) -> RunConfig:
    method_name = _pick(getattr(args, "method", None), cfg, "sampling", "method", "qocs")
    try:
        method = SamplingMethod[str(method_name).upper()]
    except KeyError:
        raise ConfigError(f"unknown sampling method {method_name!r}") from None
    return RunConfig(
        embeddings_path=Path(_require(_pick(args.embeddings, cfg, "paths", "embeddings"),
                                      "paths.embeddings")),
        records_path=Path(_require(_pick(args.records, cfg, "paths", "records"),
                                   "paths.records")),
        out_path=Path(_require(_pick(args.out, cfg, "paths", "out"), "paths.out")),
        value=_value_spec_from(args, cfg),
        target_size=int(_require(_pick(args.target_size, cfg, "sampling", "target_size"),
                                 "sampling.target_size")),
        seed=int(_pick(args.seed, cfg, "run", "seed", 0)),
        normalize=bool(_pick(args.normalize, cfg, "run", "normalize", False)),
        clusters=_pick(args.clusters, cfg, "cluster", "clusters"),
        max_iterations=int(_pick(None, cfg, "cluster", "max_iterations", 100)),
        rel_sse_tolerance=float(_pick(None, cfg, "cluster", "tolerance", 1e-6)),
        group_size=_pick(args.group_size, cfg, "shapley", "group_size"),
        iterations=int(_pick(args.iterations, cfg, "shapley", "iterations", 10)),
        method=method,
        scaling_factor=float(_pick(args.scaling_factor, cfg, "sampling",
                                   "scaling_factor", 1.0)),
    )


# ---------------------------------------------------------------------------
# subcommands


def _cmd_run(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    config = _run_config_from(args, cfg)
    manifest = run_pipeline(config)
    print(f"selection: {manifest.selection_path} ({manifest.selection_digest})")
    print(f"scores:    {manifest.score_table_path} ({manifest.score_table_digest})")
    print(f"evaluations used: {manifest.evaluations_used}")
    return EXIT_OK


def _cmd_plan(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    if args.theta is not None:
        theta = args.theta
        n = _require(
            args.dataset_size
            if args.dataset_size is not None
            else _dataset_size_or_none(args, cfg),
            "--dataset-size (or dataset files)",
        )
    else:
        embeddings = _require(_pick(args.embeddings, cfg, "paths", "embeddings"),
                              "--embeddings (to measure theta)")
        records = _require(_pick(args.records, cfg, "paths", "records"), "--records")
        dataset = load_embeddings(embeddings, records,
                                  normalize=bool(args.normalize or False))
        spec = resolve_value_spec(_value_spec_from(args, cfg), dataset)
        sample_size = min(args.sample_size, dataset.count)
        group_size = args.group_size or default_group_size(sample_size)
        seed = args.seed if args.seed is not None else 0
        theta = estimate_theta(
            dataset, spec,
            group_size=group_size, sample_size=sample_size,
            seed=derive_seed(seed, "theta"),
        )
        n = dataset.count
    plan = plan_budget(theta, args.budget, int(n), args.lambda1, args.lambda2)
    print(format_plan(plan))
    return EXIT_OK


def _dataset_size_or_none(args: argparse.Namespace, cfg: dict[str, Any]) -> int | None:
    records = _pick(args.records, cfg, "paths", "records")
    if records is None:
        return None
    return sum(1 for line in Path(records).read_text(encoding="utf-8").splitlines() if line)


def _cmd_cluster(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    dataset = load_embeddings(
        _require(_pick(args.embeddings, cfg, "paths", "embeddings"), "--embeddings"),
        _require(_pick(args.records, cfg, "paths", "records"), "--records"),
        normalize=bool(_pick(args.normalize, cfg, "run", "normalize", False)),
    )
    seed = int(_pick(args.seed, cfg, "run", "seed", 0))
    model = kmeans_fit(
        dataset,
        ClusterConfig(
            num_clusters=_pick(args.clusters, cfg, "cluster", "clusters"),
            seed=derive_seed(seed, "cluster"),
        ),
    )
    model = select_proxies(dataset, model)
    dump_cluster_model(model, args.out)
    print(f"clusters: {model.num_clusters}  sse: {model.sse:.6g}  -> {args.out}")
    return EXIT_OK


def _cmd_score(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    dataset = load_embeddings(
        _require(_pick(args.embeddings, cfg, "paths", "embeddings"), "--embeddings"),
        _require(_pick(args.records, cfg, "paths", "records"), "--records"),
        normalize=bool(_pick(args.normalize, cfg, "run", "normalize", False)),
    )
    seed = int(_pick(args.seed, cfg, "run", "seed", 0))
    model = kmeans_fit(
        dataset,
        ClusterConfig(
            num_clusters=_pick(args.clusters, cfg, "cluster", "clusters"),
            seed=derive_seed(seed, "cluster"),
        ),
    )
    model = select_proxies(dataset, model)
    proxy_ids = [dataset.records[int(r)].id for r in model.proxy_rows()]
    spec = resolve_value_spec(_value_spec_from(args, cfg), dataset)
    group_size = (
        args.group_size
        if args.group_size is not None
        else _pick(None, cfg, "shapley", "group_size")
    )
    if group_size is None:
        group_size = default_group_size(model.num_clusters)
    scores = approximate_shapley(
        spec,
        proxy_ids,
        ShapleyConfig(
            group_size=int(group_size),
            iterations=int(_pick(args.iterations, cfg, "shapley", "iterations", 10)),
            seed=derive_seed(seed, "shapley"),
        ),
    )
    table = build_score_table(dataset, model, scores.scores)
    out = Path(args.out)
    dump_cluster_model(model, out.parent / (out.name + ".clusters.txt"))
    write_score_table(table, proxy_ids, out.parent / (out.name + ".scores.txt"))
    print(f"scored {model.num_clusters} clusters with {scores.evaluations_used} evaluations")
    return EXIT_OK


def _read_score_table(path: str) -> list[float]:
    scores: dict[int, float] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#") or line.startswith("cluster\t"):
            continue
        parts = line.split("\t")
        scores[int(parts[0])] = float(parts[1])
    return [scores[c] for c in sorted(scores)]


def _cmd_sample(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    dataset = load_embeddings(
        _require(_pick(args.embeddings, cfg, "paths", "embeddings"), "--embeddings"),
        _require(_pick(args.records, cfg, "paths", "records"), "--records"),
        normalize=bool(_pick(args.normalize, cfg, "run", "normalize", False)),
    )
    model = load_cluster_model(args.cluster_model)
    scores = _read_score_table(args.scores)
    table = build_score_table(dataset, model, scores)
    method = SamplingMethod[str(args.method or "qocs").upper()]
    seed = int(_pick(args.seed, cfg, "run", "seed", 0))
    result = sample(
        table,
        SamplingConfig(
            method=method,
            target_size=args.target_size,
            scaling_factor=args.scaling_factor if args.scaling_factor is not None else 1.0,
            seed=derive_seed(seed, "sampling"),
        ),
    )
    from .dataset import export_selection

    export_selection(dataset, result, args.out)
    print(f"wrote {len(result.selected_ids)} records -> {args.out}")
    return EXIT_OK


def _cmd_exact(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    ids = [i for i in args.ids.split(",") if i]
    spec = _value_spec_from(args, cfg)
    scores = exact_shapley(spec, ids)
    for i, s in zip(ids, scores):
        print(f"{i}\t{s!r}")
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "plan": _cmd_plan,
    "cluster": _cmd_cluster,
    "score": _cmd_score,
    "sample": _cmd_sample,
    "exact-shapley": _cmd_exact,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = _load_config_file(args.config)
        return _COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except ShedError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE


def entrypoint() -> None:
    raise SystemExit(main())
