"""Command-line front end.

    contractlayer run --suite suite.json [--runs N] [--seed S]
                      [--backend scripted|bernoulli|http] [--report PATH] [--trace PATH]
    contractlayer explain --suite suite.json --contract ID

``run`` exits 0 when every contract reaches its threshold, 1 when one misses
it, and 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence, TextIO

from .contract import Contract
from .generators import GENERATOR_KINDS, build_generator
from .metrics import estimate_success
from .suite import SuiteError, SuiteFile, load_suite
from .typed_model import render_schema_prompt

EXIT_OK, EXIT_THRESHOLD, EXIT_CONFIG = 0, 1, 2


def run_suite(suite_path: str | Path, *, runs: int | None = None, seed: int | None = None,
              backend: str | None = None, report: str | Path | None = None,
              trace: str | Path | None = None, stdout: TextIO | None = None,
              client=None) -> int:
    """Estimate every contract of a suite and write the report (and trace) files."""
    stdout = stdout or sys.stdout
    suite = load_suite(suite_path)
    n = runs if runs is not None else suite.run.runs
    s = seed if seed is not None else suite.run.seed
    kind = backend or suite.run.backend
    if n < 1:
        raise SuiteError("--runs must be >= 1")
    if kind not in GENERATOR_KINDS:
        raise SuiteError(f"unknown backend '{kind}'")
    agent = suite.build_agent()
    report_path = report or suite.report_path
    trace_path = trace or suite.trace_path

    trace_out = open(trace_path, "w", encoding="utf-8") if trace_path else None
    entries = []
    all_met = True
    try:
        for spec in suite.contracts:
            contract = agent.contract(spec.id)
            if not spec.inputs:
                raise SuiteError(f"contract '{spec.id}' has no inputs")
            generator = build_generator(suite.generator_config(spec, kind), client=client)

            def write_trace(i, t, _cid=spec.id):
                if trace_out is not None:
                    trace_out.write(t.to_jsonl(run=i))

            result = estimate_success(contract, agent, generator, list(spec.inputs), n, s,
                                      workers=suite.run.workers, on_trace=write_trace)
            threshold = spec.threshold if spec.threshold is not None else suite.run.threshold
            met = result.p_succ >= threshold
            all_met = all_met and met
            entries.append({**result.to_dict(), "threshold": threshold, "meets_threshold": met})
    finally:
        if trace_out is not None:
            trace_out.close()

    doc = {"suite": suite.name, "backend": kind, "runs": n, "seed": s, "reports": entries}
    text = json.dumps(doc, indent=2, ensure_ascii=False) + "\n"
    if report_path:
        Path(report_path).write_text(text, encoding="utf-8")
    else:
        stdout.write(text)
    return EXIT_OK if all_met else EXIT_THRESHOLD


def explain_contract(suite_path: str | Path, contract_id: str) -> str:
    suite = load_suite(suite_path)
    spec = suite.contract_spec(contract_id)
    contract = suite.build_contract(spec)
    return describe_contract(contract, suite)


def describe_contract(contract: Contract, suite: SuiteFile | None = None) -> str:
    hp = suite.hyperparameters if suite is not None else None
    pre = contract.pre_retry or (hp.pre_retry if hp else None)
    post = contract.post_retry or (hp.post_retry if hp else None)
    lines = [
        f"contract: {contract.id}",
        f"input schema: {contract.input_schema.name}",
        f"output schema: {contract.output_schema.name}",
    ]
    if contract.act is not None:
        fields = ", ".join(contract.act.spec.fields) if contract.act.spec else ""
        lines.append(f"act: present ({contract.act.name}{': ' + fields if fields else ''})")
    else:
        lines.append("act: absent")
    for label, preds in (("preconditions", contract.preconditions), ("postconditions", contract.postconditions)):
        lines.append(f"{label}: {len(preds)}")
        for p in preds:
            kind = f" {p.spec.kind}" if p.spec is not None else ""
            lines.append(f"  - {p.name} [family: {p.family}] target={p.target}{kind}")
    for label, policy in (("pre retry", pre), ("post retry", post)):
        if policy is None:
            lines.append(f"{label}: agent default")
        else:
            lines.append(
                f"{label}: max_attempts={policy.max_attempts} initial_delay={policy.initial_delay}s "
                f"backoff_factor={policy.backoff_factor} max_delay={policy.max_delay}s "
                f"remediation={'on' if policy.remediation_enabled else 'off'}")
    lines.append(f"fallback: {contract.fallback.kind}")
    if contract.prompt:
        lines.append(f"prompt: {contract.prompt}")
    lines.append("schema prompt:")
    lines.append(render_schema_prompt(contract.output_schema).rstrip("\n"))
    return "\n".join(lines) + "\n"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contractlayer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="estimate success probabilities for every contract in a suite")
    run.add_argument("--suite", required=True)
    run.add_argument("--runs", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--backend", choices=GENERATOR_KINDS)
    run.add_argument("--report")
    run.add_argument("--trace")
    explain = sub.add_parser("explain", help="describe one contract")
    explain.add_argument("--suite", required=True)
    explain.add_argument("--contract", required=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return run_suite(args.suite, runs=args.runs, seed=args.seed, backend=args.backend,
                             report=args.report, trace=args.trace)
        sys.stdout.write(explain_contract(args.suite, args.contract))
        return EXIT_OK
    except (SuiteError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
