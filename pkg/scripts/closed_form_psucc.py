"""Sweep per-attempt success p and retry budget r against 1 - (1 - p)^r.

    python3 scripts/closed_form_psucc.py --runs 10000 --seed 7
"""

from __future__ import annotations

import argparse
import json
import math
from dataclasses import asdict, dataclass

from contractlayer import (
    BernoulliGenerator,
    Contract,
    FamilySpec,
    FieldSpec,
    Predicate,
    RetryPolicy,
    TypeSchema,
    agent_for,
    estimate_success,
)
from contractlayer.contract import Hyperparameters

QUESTION = TypeSchema("Question", (FieldSpec("q", "string"),))
ANSWER = TypeSchema("Answer", (FieldSpec("answer", "integer"),))


@dataclass
class SweepConfig:
    probabilities: tuple[float, ...] = (0.2, 0.5, 0.8)
    attempts: tuple[int, ...] = (1, 2, 3, 5)
    runs: int = 10_000
    seed: int = 7


def run(cfg: SweepConfig) -> list[dict]:
    rows = []
    for p in cfg.probabilities:
        for r in cfg.attempts:
            contract = Contract("answer42", QUESTION, ANSWER,
                                postconditions=(Predicate("is42", lambda o: o["answer"] == 42, "correct"),),
                                post_retry=RetryPolicy(max_attempts=r))
            agent = agent_for(contract, hyperparameters=Hyperparameters(max_calls=max(r, 1)))
            gen = BernoulliGenerator({"answer": 42}, {"correct": FamilySpec(p, {"answer": 7})}, seed=cfg.seed)
            rep = estimate_success(contract, agent, gen, [{"q": "?"}], cfg.runs, cfg.seed)
            closed = 1 - (1 - p) ** r
            sigma = math.sqrt(closed * (1 - closed) / cfg.runs)
            rows.append({"p": p, "max_attempts": r, "p_succ": rep.p_succ, "closed_form": round(closed, 6),
                         "within_3_sigma": abs(rep.p_succ - closed) <= 3 * sigma + 1e-12,
                         "mean_calls": rep.mean_calls})
    return rows


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--runs", type=int, default=SweepConfig.runs)
    parser.add_argument("--seed", type=int, default=SweepConfig.seed)
    args = parser.parse_args()
    cfg = SweepConfig(runs=args.runs, seed=args.seed)
    rows = run(cfg)
    print(json.dumps({"config": asdict(cfg), "rows": rows}, indent=2))


if __name__ == "__main__":
    main()
