"""Compute-budget planning: measure the per-(iteration x cluster) time
coefficient, pick integer (k, C) under a wall-clock budget, and evaluate the
closed-form cost model of the group-removal estimator."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .dataset import EmbeddedDataset
from .errors import InfeasibleBudget, InvalidParams
from .valuation import ShapleyConfig, ValueFunctionSpec, approximate_shapley

K_TARGET = 10  # recommended iteration count
K_SCAN_MAX = 200
CONSTRAINT_SLACK = 0.05  # integer rounding may miss theta*k*C = t0 by up to 5%


@dataclass(frozen=True)
class BudgetPlan:
    theta: float
    t0: float
    lambda1: float
    lambda2: float
    k_star: int
    c_star: int
    objective: float
    residual: float  # |theta*k*C - t0| / t0


@dataclass(frozen=True)
class ComplexityParams:
    """Inputs to the cost model: cluster count C, group size n, iterations k,
    per-instance tuning time t, per-evaluation time Tm."""

    clusters: int
    group_size: int
    iterations: int
    tune_seconds_per_instance: float
    eval_seconds: float

    def __post_init__(self) -> None:
        if self.clusters < 1 or self.group_size < 1 or self.iterations < 1:
            raise InvalidParams("C, n, k must all be >= 1")
        if self.group_size > self.clusters:
            raise InvalidParams(
                f"group_size {self.group_size} exceeds clusters {self.clusters}"
            )
        for v in (self.tune_seconds_per_instance, self.eval_seconds):
            if not math.isfinite(v) or v < 0:
                raise InvalidParams("time parameters must be finite and >= 0")


def theta_from_timing(elapsed_seconds: float, iterations: int, clusters: int) -> float:
    """Seconds per (iteration x cluster) in the cost model t = theta*k*C."""
    theta = elapsed_seconds / (iterations * clusters)
    return max(theta, 1e-12)


def estimate_theta(
    dataset: EmbeddedDataset,
    spec: ValueFunctionSpec,
    *,
    group_size: int,
    sample_size: int = 2000,
    seed: int = 0,
) -> float:
    """Time one removal iteration over a random sample and derive theta.

    The sample stands in for the proxy set; it uses the same group size the
    main run will use, so the measured cost reflects real chain lengths.
    """
    if sample_size < 1:
        raise InvalidParams("sample_size must be >= 1")
    if sample_size > dataset.count:
        raise InvalidParams(
            f"sample_size {sample_size} exceeds dataset size {dataset.count}"
        )
    rng = np.random.default_rng(seed)
    rows = rng.choice(dataset.count, size=sample_size, replace=False)
    ids = [dataset.records[int(r)].id for r in rows]
    start = time.perf_counter()
    approximate_shapley(
        spec, ids, ShapleyConfig(group_size=group_size, iterations=1, seed=seed)
    )
    elapsed = time.perf_counter() - start
    return theta_from_timing(elapsed, 1, sample_size)


def plan_budget(
    theta: float,
    t0: float,
    dataset_size: int,
    lambda1: float = 1.0,
    lambda2: float = 1.0,
) -> BudgetPlan:
    """Integer (k, C) minimizing lambda1*(k - 10)^2 + lambda2*(C - 3*sqrt(N))^2
    subject to theta*k*C = t0 within 5% relative slack.

    The equality constraint is eliminated by substitution: scan k over
    [1, 200] with C = round(t0 / (theta * k)) and its +-1 neighbors. At this
    problem size the scan is exact and deterministic.
    """
    if theta <= 0 or not math.isfinite(theta):
        raise InvalidParams(f"theta must be positive and finite, got {theta}")
    if dataset_size < 1:
        raise InvalidParams("dataset_size must be >= 1")
    if lambda1 < 0 or lambda2 < 0:
        raise InvalidParams("lambda weights must be >= 0")
    if t0 < theta:
        raise InfeasibleBudget(
            f"budget {t0}s cannot afford one evaluation at theta={theta}"
        )

    c_target = 3.0 * math.sqrt(dataset_size)
    best: tuple[float, int, int, float] | None = None
    for k in range(1, K_SCAN_MAX + 1):
        c_mid = round(t0 / (theta * k))
        for c in (c_mid - 1, c_mid, c_mid + 1):
            if c < 1:
                continue
            residual = abs(theta * k * c - t0) / t0
            if residual > CONSTRAINT_SLACK:
                continue
            objective = lambda1 * (k - K_TARGET) ** 2 + lambda2 * (c - c_target) ** 2
            key = (objective, k, c, residual)
            if best is None or key < best:
                best = key
    if best is None:
        raise InfeasibleBudget(
            f"no integer (k, C) satisfies theta*k*C = {t0} within "
            f"{CONSTRAINT_SLACK:.0%} for theta={theta}"
        )
    objective, k_star, c_star, residual = best
    return BudgetPlan(
        theta=theta,
        t0=t0,
        lambda1=lambda1,
        lambda2=lambda2,
        k_star=k_star,
        c_star=c_star,
        objective=objective,
        residual=residual,
    )


def estimate_runtime(params: ComplexityParams) -> float:
    """Cost model of the full estimator: (C*k/n) * ((C + n)*t/2 + Tm) seconds."""
    c = params.clusters
    n = params.group_size
    k = params.iterations
    t = params.tune_seconds_per_instance
    tm = params.eval_seconds
    return (c * k / n) * ((c + n) * t / 2.0 + tm)


def format_plan(plan: BudgetPlan) -> str:
    return "\n".join(
        [
            f"theta:      {plan.theta:.6g} s per (iteration x cluster)",
            f"budget t0:  {plan.t0:.6g} s",
            f"plan:       k={plan.k_star} clusters={plan.c_star}",
            f"objective:  {plan.objective:.6g}",
            f"residual:   {plan.residual:.4%} of t0",
        ]
    )
