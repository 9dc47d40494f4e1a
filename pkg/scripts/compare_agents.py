"""Compare two agents on the same contract: one retries cheaply, one needs more calls.

    python3 scripts/compare_agents.py --runs 2000
"""

from __future__ import annotations

import argparse
import json

from contractlayer import (
    BernoulliGenerator,
    Contract,
    FamilySpec,
    FieldSpec,
    Predicate,
    RetryPolicy,
    TypeSchema,
    agent_for,
    compare_agents,
    estimate_success,
)
from contractlayer.contract import Hyperparameters

QUESTION = TypeSchema("Question", (FieldSpec("q", "string"),))
ANSWER = TypeSchema("Answer", (FieldSpec("answer", "integer"),))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--runs", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=3)
    parser.add_argument("--threshold", type=float, default=0.95)
    args = parser.parse_args()

    contract = Contract("answer42", QUESTION, ANSWER,
                        postconditions=(Predicate("is42", lambda o: o["answer"] == 42, "correct"),),
                        post_retry=RetryPolicy(max_attempts=6))
    hp = Hyperparameters(max_calls=6)
    reports = {}
    for agent_id, p in (("strong", 0.9), ("weak", 0.5)):
        gen = BernoulliGenerator({"answer": 42}, {"correct": FamilySpec(p, {"answer": 7})}, seed=args.seed)
        agent = agent_for(contract, hyperparameters=hp, id=agent_id)
        reports[agent_id] = {contract.id: estimate_success(contract, agent, gen, [{"q": "?"}], args.runs, args.seed)}
    verdict = compare_agents(reports["strong"], reports["weak"], args.threshold)
    print(json.dumps({
        "p_succ": {k: v[contract.id].p_succ for k, v in reports.items()},
        "mean_calls": {k: v[contract.id].mean_calls for k, v in reports.items()},
        "equivalent": verdict.equivalent,
        "delta_p_succ": verdict.delta_p_succ,
        "delta_mean_calls": verdict.delta_mean_calls,
        "potential": verdict.potential,
    }, indent=2))


if __name__ == "__main__":
    main()
