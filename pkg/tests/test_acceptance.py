"""Acceptance criteria, each at its stated tolerance.

Every test records a one-line PASS/FAIL verdict; the lines are repeated in
the terminal summary under "acceptance criteria".
"""

import dataclasses
import json
import random
import time

import pytest

from contractlayer import (
    BernoulliGenerator,
    Contract,
    ContractError,
    FamilySpec,
    FieldSpec,
    Instance,
    Predicate,
    RetryPolicy,
    ScriptedGenerator,
    ScriptEntry,
    TypeSchema,
    agent_for,
    cli,
    estimate_success,
    execute,
    factorize_families,
    parse_output,
    serialize_instance,
    validate_instance,
)

from _fuzz import mutate, phase_order_ok, random_case, random_schema, random_value
from _oracle import as_counter, oracle
from _verdicts import verdict

pytestmark = pytest.mark.acceptance

QUESTION = TypeSchema("Question", (FieldSpec("q", "string"),))
ANSWER = TypeSchema("Answer", (FieldSpec("answer", "integer"),))
PAIR = TypeSchema("Pair", (FieldSpec("a", "integer"), FieldSpec("b", "integer")))
INPUTS = [{"q": "what is six times seven?"}]


def answer_contract(attempts):
    return Contract("answer42", QUESTION, ANSWER,
                    postconditions=(Predicate("is42", lambda o: o["answer"] == 42, "correct"),),
                    post_retry=RetryPolicy(max_attempts=attempts))


def pair_contract():
    return Contract("pair", QUESTION, PAIR, postconditions=(
        Predicate("a_ok", lambda o: o["a"] == 1, "A"),
        Predicate("b_ok", lambda o: o["b"] == 1, "B"),
    ), post_retry=RetryPolicy(max_attempts=1))


def test_criterion_1_closed_form_psucc():
    c = answer_contract(2)
    gen = BernoulliGenerator({"answer": 42}, {"correct": FamilySpec(0.5, {"answer": 7})}, seed=2024)
    start = time.perf_counter()
    rep = estimate_success(c, agent_for(c), gen, INPUTS, 10_000, seed=2024)
    elapsed = time.perf_counter() - start
    ok = abs(rep.p_succ - 0.75) <= 0.02 and elapsed < 60
    assert verdict(1, ok, f"p_succ={rep.p_succ:.4f} target 0.75+-0.02, {elapsed:.1f}s")


def test_criterion_2_degenerate_estimators():
    c = answer_contract(1)
    always_valid = ScriptedGenerator([ScriptEntry('{"answer": 42}', repeat=True)])
    always_invalid = ScriptedGenerator([ScriptEntry('{"answer": 0}', repeat=True)])
    hi = estimate_success(c, agent_for(c), always_valid, INPUTS, 100, seed=0).p_succ
    lo = estimate_success(c, agent_for(c), always_invalid, INPUTS, 100, seed=0).p_succ
    assert verdict(2, hi == 1.0 and lo == 0.0, f"always-valid {hi}, always-invalid {lo}")


def test_criterion_3_factorization_study():
    c = pair_contract()
    indep = BernoulliGenerator({"a": 1, "b": 1}, {"A": FamilySpec(0.9, {"a": 0}), "B": FamilySpec(0.8, {"b": 0})},
                               seed=31, corrupt_mode="all")
    r1 = estimate_success(c, agent_for(c), indep, INPUTS, 10_000, seed=31)
    # anti-correlated: every call fails exactly one of the two families
    anti = BernoulliGenerator({"a": 1, "b": 1}, {"A": FamilySpec(0.0, {"a": 0}), "B": FamilySpec(0.0, {"b": 0})},
                              seed=32, corrupt_mode="one")
    r2 = estimate_success(c, agent_for(c), anti, INPUTS, 10_000, seed=32)
    f2 = factorize_families(r2.records)
    ok = (abs(r1.product_approx - r1.empirical_joint) <= 0.02
          and f2.empirical_joint == 0.0 and abs(f2.product_approx - 0.25) <= 0.02
          and f2.divergence >= 0.20)
    assert verdict(3, ok, f"independent |{r1.product_approx:.4f}-{r1.empirical_joint:.4f}|; "
                          f"anti-correlated joint {f2.empirical_joint} product {f2.product_approx:.4f} "
                          f"divergence {f2.divergence:.4f}")


def _corpus(n, seed=404):
    """Yield (contract, agent, outcome-or-error, trace, finalize_count) over fuzzed cases."""
    rng = random.Random(seed)
    produced = 0
    while produced < n:
        case = random_case(rng)
        if case is None:
            continue
        contract, agent, script, value = case
        calls = []
        contract = dataclasses.replace(contract, on_finalize=calls.append)
        agent = agent_for(contract, hyperparameters=agent.hyperparameters)
        try:
            outcome, trace = execute(contract, agent, ScriptedGenerator(script), value, sleep=lambda s: None)
            error = None
        except ContractError as exc:
            outcome, trace, error = exc.outcome, exc.trace, exc
        produced += 1
        yield contract, agent, outcome, error, trace, len(calls)


CORPUS_SIZE = 1500


@pytest.fixture(scope="module")
def corpus():
    return list(_corpus(CORPUS_SIZE))


def test_criterion_4_termination_and_finalize(corpus):
    problems = []
    modes = {"strict": 0, "graceful-raw": 0, "graceful-default": 0}
    for i, (contract, agent, outcome, error, trace, finals) in enumerate(corpus):
        pre, post = agent.policies(contract)
        bound = min(1 + (pre.effective_attempts - 1) + (post.effective_attempts - 1), agent.hyperparameters.max_calls)
        mode = contract.fallback.kind
        modes[mode] += 1
        names = trace.phase_names()
        if trace.generator_calls > bound:
            problems.append(f"case {i}: {trace.generator_calls} calls > bound {bound}")
        if not phase_order_ok(names):
            problems.append(f"case {i}: phase order {names}")
        if names.count("finalize") != 1 or finals != 1:
            problems.append(f"case {i}: finalize logged {names.count('finalize')}x, hook ran {finals}x")
        if contract.fallback.graceful and error is not None:
            problems.append(f"case {i}: graceful mode raised {error}")
        if mode == "strict" and (error is not None) != (outcome.kind == "failed"):
            problems.append(f"case {i}: strict mode outcome {outcome.kind} vs raised={error is not None}")
        if trace.stop_reason.startswith("internal error"):
            problems.append(f"case {i}: {trace.stop_reason}")
    kinds = {o.kind for _, _, o, _, _, _ in corpus}
    ok = not problems and len(corpus) >= 1000
    assert verdict(4, ok, f"{len(corpus)} executions, modes {modes}, outcomes {sorted(kinds)}, "
                          f"{len(problems)} violations"), problems[:10]


def test_criterion_5_soundness(corpus):
    discrepancies = []
    checked = 0
    for i, (contract, _, outcome, _, trace, _) in enumerate(corpus):
        if outcome.kind != "validated":
            continue
        checked += 1
        out, inp = outcome.instance.value, trace.input.value
        # round through JSON so nothing shared with the engine survives
        out, inp = json.loads(json.dumps(out)), json.loads(json.dumps(inp))
        if oracle(contract.output_schema, out) or oracle(contract.input_schema, inp):
            discrepancies.append(f"case {i}: instance fails the reference checker")
        for p in contract.preconditions + contract.postconditions:
            args = {"input": (Instance.of(contract.input_schema, inp),),
                    "output": (Instance.of(contract.output_schema, out),),
                    "input+output": (Instance.of(contract.input_schema, inp),
                                     Instance.of(contract.output_schema, out))}[p.target]
            try:
                passed = p.evaluator(*args) is not False
            except Exception:
                passed = False
            if not passed:
                discrepancies.append(f"case {i}: predicate {p.name} fails on re-evaluation")
    ok = not discrepancies and checked > 0
    assert verdict(5, ok, f"{checked} validated outcomes re-checked, {len(discrepancies)} discrepancies"), \
        discrepancies[:10]


def test_criterion_6_round_trip_and_oracle():
    rng = random.Random(606)
    trips = mismatches = oracle_cases = 0
    failures = []
    while trips < 10_000:
        schema = random_schema(rng)
        value = random_value(rng, schema)
        if value is None:
            continue
        inst = Instance.of(schema, value)
        if parse_output(serialize_instance(inst), schema) != inst:
            failures.append(f"round trip {trips}")
        trips += 1
        if trips % 5 == 0:
            broken = mutate(rng, schema, value)
            oracle_cases += 2
            if validate_instance(schema, value) or \
                    as_counter(validate_instance(schema, broken)) != oracle(schema, broken):
                mismatches += 1
    ok = not failures and mismatches == 0
    assert verdict(6, ok, f"{trips} round trips ({len(failures)} failed), "
                          f"{oracle_cases} oracle comparisons ({mismatches} mismatched)"), failures[:10]


def test_criterion_7_determinism(tmp_path):
    from pathlib import Path

    suite = Path(__file__).resolve().parent.parent / "suites" / "contacts.json"
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        cli.run_suite(suite, runs=2_000, seed=77, backend="bernoulli", report=path)
    ok = a.read_bytes() == b.read_bytes()
    assert verdict(7, ok, f"two {a.stat().st_size}-byte reports {'identical' if ok else 'differ'}")


def test_criterion_8_remediation_bookkeeping():
    c = answer_contract(3)
    gen = ScriptedGenerator(['{"answer": "forty-two"}', '{"answer": 41}', '{"answer": 42}'])
    outcome, trace = execute(c, agent_for(c), gen, INPUTS[0])
    history = trace.error_history
    third = gen.prompts[2]
    lines = [r.line() for r in history]
    ok = (outcome.validated and trace.generator_calls == 3
          and trace.phases[-2].phase == "post" and trace.phases[-2].attempt == 3
          and len(history) == 2 and all(line in third for line in lines))
    assert verdict(8, ok, f"outcome {outcome.kind} after {trace.generator_calls} calls, "
                          f"history length {len(history)}, third prompt carries both lines: "
                          f"{all(line in third for line in lines)}")
