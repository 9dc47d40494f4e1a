"""Success-probability estimation, family factorization and agent comparison."""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

from .contract import Agent, Contract, ContractError, ExecutionTrace, execute
from .generators import Generator

DEFAULT_THRESHOLD = 0.95


def derive_seed(seed: int, index: int) -> int:
    digest = hashlib.sha256(f"{seed}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass(frozen=True)
class RunRecord:
    index: int
    success: bool
    families: Mapping[str, bool]
    generator_calls: int
    latency: float
    tokens_in: int
    tokens_out: int
    transport_error: bool = False

    @classmethod
    def from_trace(cls, index: int, trace: ExecutionTrace) -> RunRecord:
        return cls(
            index=index,
            success=trace.final is not None and trace.final.validated,
            families=dict(trace.families),
            generator_calls=trace.generator_calls,
            latency=trace.latency,
            tokens_in=trace.tokens_in,
            tokens_out=trace.tokens_out,
            transport_error=trace.transport_errors > 0,
        )


@dataclass(frozen=True)
class Factorization:
    per_family: dict[str, float]
    product_approx: float
    empirical_joint: float

    @property
    def divergence(self) -> float:
        return abs(self.product_approx - self.empirical_joint)


def factorize_families(records: Sequence[RunRecord]) -> Factorization:
    """Per-family pass rates, their product, and the observed all-pass rate."""
    if not records:
        raise ValueError("need at least one run record")
    names = set(records[0].families)
    for r in records:
        if set(r.families) != names:
            raise ValueError(f"run {r.index} has families {sorted(r.families)}, expected {sorted(names)}")
    n = len(records)
    per_family = {f: sum(r.families[f] for r in records) / n for f in sorted(names)}
    product = math.prod(per_family.values())
    joint = sum(all(r.families.values()) for r in records) / n
    return Factorization(per_family, product, joint)


@dataclass(frozen=True)
class SuccessReport:
    contract_id: str
    agent_id: str
    n: int
    seed: int
    successes: int
    p_succ: float
    per_family: dict[str, float]
    product_approx: float
    empirical_joint: float
    transport_error_runs: int
    mean_calls: float
    max_calls: int
    mean_latency_ms: float
    max_latency_ms: float
    mean_tokens_in: float
    mean_tokens_out: float
    records: tuple[RunRecord, ...] = field(default=(), compare=False, repr=False)

    def to_dict(self) -> dict:
        return {
            "contract": self.contract_id,
            "agent": self.agent_id,
            "n": self.n,
            "seed": self.seed,
            "successes": self.successes,
            "p_succ": self.p_succ,
            "families": dict(self.per_family),
            "product_approx": self.product_approx,
            "empirical_joint": self.empirical_joint,
            "transport_error_runs": self.transport_error_runs,
            "cost": {
                "mean_calls": self.mean_calls,
                "max_calls": self.max_calls,
                "mean_latency_ms": self.mean_latency_ms,
                "max_latency_ms": self.max_latency_ms,
                "mean_tokens_in": self.mean_tokens_in,
                "mean_tokens_out": self.mean_tokens_out,
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> SuccessReport:
        cost = d["cost"]
        return cls(d["contract"], d["agent"], d["n"], d["seed"], d["successes"], d["p_succ"],
                   dict(d["families"]), d["product_approx"], d["empirical_joint"],
                   d["transport_error_runs"], cost["mean_calls"], cost["max_calls"],
                   cost["mean_latency_ms"], cost["max_latency_ms"], cost["mean_tokens_in"],
                   cost["mean_tokens_out"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


def run_once(contract: Contract, agent: Agent, generator: Generator, value: Any,
             index: int, seed: int, sleep: Callable[[float], None] = time.sleep) -> ExecutionTrace:
    run_seed = derive_seed(seed, index)
    gen = generator.for_run(run_seed) if hasattr(generator, "for_run") else generator
    try:
        _, trace = execute(contract, agent, gen, value, seed=run_seed, sleep=sleep)
    except ContractError as exc:
        trace = exc.trace
    return trace


def estimate_success(contract: Contract, agent: Agent, generator: Generator,
                     inputs: Sequence[Any], n: int, seed: int, *, workers: int = 1,
                     on_trace: Callable[[int, ExecutionTrace], None] | None = None,
                     sleep: Callable[[float], None] = time.sleep) -> SuccessReport:
    """Execute ``contract`` ``n`` times and summarize the Bernoulli outcomes.

    Inputs are cycled round-robin. Run ``i`` gets the seed ``derive_seed(seed, i)``
    and, when the generator supports it, its own generator handle, so results
    do not depend on ``workers`` or scheduling order. Degraded outcomes count
    as failures.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not inputs:
        raise ValueError("the input corpus must be non-empty")

    def one(i: int) -> ExecutionTrace:
        return run_once(contract, agent, generator, inputs[i % len(inputs)], i, seed, sleep)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(one, range(n)))
    else:
        traces = [one(i) for i in range(n)]

    records = []
    for i, trace in enumerate(traces):
        if on_trace is not None:
            on_trace(i, trace)
        records.append(RunRecord.from_trace(i, trace))
    return summarize(contract.id, agent.id, seed, records)


def summarize(contract_id: str, agent_id: str, seed: int, records: Sequence[RunRecord]) -> SuccessReport:
    n = len(records)
    successes = sum(r.success for r in records)
    fact = factorize_families(records)
    calls = [r.generator_calls for r in records]
    lat = [r.latency * 1000 for r in records]
    return SuccessReport(
        contract_id=contract_id,
        agent_id=agent_id,
        n=n,
        seed=seed,
        successes=successes,
        p_succ=successes / n,
        per_family=fact.per_family,
        product_approx=fact.product_approx,
        empirical_joint=fact.empirical_joint,
        transport_error_runs=sum(r.transport_error for r in records),
        mean_calls=sum(calls) / n,
        max_calls=max(calls),
        mean_latency_ms=sum(lat) / n,
        max_latency_ms=max(lat),
        mean_tokens_in=sum(r.tokens_in for r in records) / n,
        mean_tokens_out=sum(r.tokens_out for r in records) / n,
        records=tuple(records),
    )


@dataclass(frozen=True)
class EquivalenceVerdict:
    agents: tuple[str, str]
    equivalent: bool
    delta_p_succ: dict[str, float]  # first agent minus second, per contract
    delta_mean_calls: float
    delta_mean_latency_ms: float
    potential: str  # "A>B", "B>A" or "incomparable"
    satisfied: tuple[frozenset[str], frozenset[str]]


def compare_agents(reports_a: Mapping[str, SuccessReport], reports_b: Mapping[str, SuccessReport],
                   threshold: float = DEFAULT_THRESHOLD) -> EquivalenceVerdict:
    """Compare two agents run over the same contract suite.

    They are equivalent when both reach ``threshold`` on every contract.
    Potential is ordered by strict inclusion of the satisfied-contract sets
    and never by success rates.
    """
    if set(reports_a) != set(reports_b):
        raise ValueError(f"contract suites differ: {sorted(reports_a)} vs {sorted(reports_b)}")
    if not reports_a:
        raise ValueError("empty contract suite")
    for cid in reports_a:
        if reports_a[cid].n != reports_b[cid].n:
            raise ValueError(f"contract '{cid}': run counts differ ({reports_a[cid].n} vs {reports_b[cid].n})")
    ids = (_agent_id(reports_a), _agent_id(reports_b))
    sat_a = frozenset(c for c, r in reports_a.items() if r.p_succ >= threshold)
    sat_b = frozenset(c for c, r in reports_b.items() if r.p_succ >= threshold)
    suite = frozenset(reports_a)
    if sat_b < sat_a:
        potential = "A>B"
    elif sat_a < sat_b:
        potential = "B>A"
    else:
        potential = "incomparable"
    k = len(suite)
    return EquivalenceVerdict(
        agents=ids,
        equivalent=sat_a == suite and sat_b == suite,
        delta_p_succ={c: reports_a[c].p_succ - reports_b[c].p_succ for c in sorted(suite)},
        delta_mean_calls=sum(reports_a[c].mean_calls - reports_b[c].mean_calls for c in sorted(suite)) / k,
        delta_mean_latency_ms=sum(reports_a[c].mean_latency_ms - reports_b[c].mean_latency_ms for c in sorted(suite)) / k,
        potential=potential,
        satisfied=(sat_a, sat_b),
    )


def _agent_id(reports: Mapping[str, SuccessReport]) -> str:
    return next(iter(reports.values())).agent_id
