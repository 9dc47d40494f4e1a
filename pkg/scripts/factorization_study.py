"""How far the per-family product drifts from the observed joint success rate.

Cases, each on a two-family mock:

- independent failures, single attempt
- anti-correlated failures, where every call breaks exactly one family
- independent failures with a retry budget; family rates are then read
  off the final attempt of each run

    python3 scripts/factorization_study.py --runs 10000
"""

from __future__ import annotations

import argparse
import json
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

QUESTION = TypeSchema("Question", (FieldSpec("q", "string"),))
PAIR = TypeSchema("Pair", (FieldSpec("a", "integer"), FieldSpec("b", "integer")))


@dataclass
class StudyConfig:
    p_a: float = 0.9
    p_b: float = 0.8
    runs: int = 10_000
    seed: int = 11
    retry_attempts: int = 3


def _contract(attempts: int) -> Contract:
    return Contract("pair", QUESTION, PAIR, postconditions=(
        Predicate("a_ok", lambda o: o["a"] == 1, "A"),
        Predicate("b_ok", lambda o: o["b"] == 1, "B"),
    ), post_retry=RetryPolicy(max_attempts=attempts))


def run(cfg: StudyConfig) -> dict:
    cases = {
        "independent": (1, cfg.p_a, cfg.p_b, "all"),
        "anti_correlated": (1, 0.0, 0.0, "one"),
        "independent_with_retries": (cfg.retry_attempts, cfg.p_a, cfg.p_b, "all"),
    }
    out = {}
    for name, (attempts, pa, pb, mode) in cases.items():
        contract = _contract(attempts)
        gen = BernoulliGenerator({"a": 1, "b": 1}, {"A": FamilySpec(pa, {"a": 0}), "B": FamilySpec(pb, {"b": 0})},
                                 seed=cfg.seed, corrupt_mode=mode)
        rep = estimate_success(contract, agent_for(contract), gen, [{"q": "?"}], cfg.runs, cfg.seed)
        out[name] = {
            "families": {k: v for k, v in rep.per_family.items() if k != "typing"},
            "product_approx": rep.product_approx,
            "empirical_joint": rep.empirical_joint,
            "divergence": abs(rep.product_approx - rep.empirical_joint),
        }
    return out


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--runs", type=int, default=StudyConfig.runs)
    parser.add_argument("--seed", type=int, default=StudyConfig.seed)
    args = parser.parse_args()
    cfg = StudyConfig(runs=args.runs, seed=args.seed)
    print(json.dumps({"config": asdict(cfg), "results": run(cfg)}, indent=2))


if __name__ == "__main__":
    main()
