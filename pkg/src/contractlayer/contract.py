"""Contracts, agents and the contract execution flow.

An execution walks the phases

    type-in -> pre -> [fix-in -> type-in -> pre]* -> act -> generate
            -> type-out -> post -> [fix-out -> type-out -> post]* -> finalize

Any unremediated failure jumps straight to ``finalize``, which runs exactly
once from a ``finally`` block and maps the partial state to an outcome
according to the contract's fallback mode.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from .generators import Generator, GeneratorConfig, GeneratorRequest, TransportError
from .remediation import (
    ErrorHistory,
    RetryPolicy,
    build_corrective_prompt,
    fix_base_prompt,
    next_delay,
)
from .typed_model import (
    Instance,
    ParseError,
    TypeSchema,
    check_schema,
    extract_value,
    parse_output,
    render_schema_prompt,
    serialize_instance,
    validate_instance,
)

PHASES = ("type-in", "pre", "fix-in", "act", "generate", "type-out", "post", "fix-out", "finalize")
TARGETS = ("input", "output", "input+output")
TYPING_FAMILY = "typing"


class ContractError(Exception):
    """Raised by :func:`execute` in strict mode, after finalization has run."""

    def __init__(self, outcome: ContractOutcome, trace: ExecutionTrace):
        super().__init__(outcome.error or "contract failed")
        self.outcome = outcome
        self.trace = trace


class ActError(Exception):
    pass


# --------------------------------------------------------------------------
# data model


@dataclass(frozen=True)
class Predicate:
    """A named check over the input, the output, or both.

    The evaluator receives :class:`Instance` arguments matching ``target`` and
    passes by returning ``True``/``None``. Returning ``False`` or raising
    fails the check; an exception's text becomes the violation message.
    """

    name: str
    evaluator: Callable[..., Any] = field(compare=False)
    family: str = "default"
    target: str = "output"
    spec: Any = None  # declarative origin, when loaded from a suite file

    def evaluate(self, input: Instance | None, output: Instance | None = None) -> str | None:
        args = {"input": (input,), "output": (output,), "input+output": (input, output)}[self.target]
        try:
            result = self.evaluator(*args)
        except Exception as exc:
            return str(exc) or f"predicate '{self.name}' raised {type(exc).__name__}"
        if result is False:
            return f"predicate '{self.name}' returned False"
        return None


@dataclass(frozen=True)
class Act:
    """Deterministic transform from the input to the generation context."""

    schema: TypeSchema
    transform: Callable[[Instance], Any] = field(compare=False)
    name: str = "act"
    spec: Any = None


@dataclass(frozen=True)
class FallbackMode:
    kind: str = "strict"
    default: Instance | None = None

    def __post_init__(self):
        if self.kind not in ("strict", "graceful-raw", "graceful-default"):
            raise ValueError(f"unknown fallback mode {self.kind!r}")
        if self.kind == "graceful-default" and self.default is None:
            raise ValueError("graceful-default needs a default instance")

    @property
    def graceful(self) -> bool:
        return self.kind != "strict"


STRICT = FallbackMode("strict")
GRACEFUL_RAW = FallbackMode("graceful-raw")


def graceful_default(instance: Instance) -> FallbackMode:
    return FallbackMode("graceful-default", instance)


@dataclass(frozen=True)
class Contract:
    id: str
    input_schema: TypeSchema
    output_schema: TypeSchema
    prompt: str = ""
    preconditions: tuple[Predicate, ...] = ()
    postconditions: tuple[Predicate, ...] = ()
    act: Act | None = None
    pre_retry: RetryPolicy | None = None  # None: use the agent's default
    post_retry: RetryPolicy | None = None
    fallback: FallbackMode = STRICT
    on_finalize: Callable[[Any], Any] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "preconditions", tuple(self.preconditions))
        object.__setattr__(self, "postconditions", tuple(self.postconditions))
        problems = []
        for label, schema in (("input", self.input_schema), ("output", self.output_schema)):
            problems += [f"{label} schema: {e}" for e in check_schema(schema)]
        if self.act is not None:
            problems += [f"act schema: {e}" for e in check_schema(self.act.schema)]
        names = [p.name for p in self.preconditions + self.postconditions]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            problems.append(f"duplicate predicate names: {', '.join(dupes)}")
        for p in self.preconditions + self.postconditions:
            if not p.family:
                problems.append(f"predicate '{p.name}' has an empty family")
            if p.family == TYPING_FAMILY:
                problems.append(f"predicate '{p.name}': family '{TYPING_FAMILY}' is reserved")
        for p in self.preconditions:
            if p.target != "input":
                problems.append(f"precondition '{p.name}' must target the input")
        for p in self.postconditions:
            if p.target not in ("output", "input+output"):
                problems.append(f"postcondition '{p.name}' must target output or input+output")
        if self.fallback.kind == "graceful-default":
            d = self.fallback.default
            if d.schema != self.output_schema or validate_instance(self.output_schema, d.value):
                problems.append("graceful-default instance is not well-typed against the output schema")
        if problems:
            raise ValueError(f"invalid contract '{self.id}': " + "; ".join(problems))

    def families(self) -> list[str]:
        fams = [TYPING_FAMILY]
        for p in self.preconditions + self.postconditions:
            if p.family not in fams:
                fams.append(p.family)
        return fams


@dataclass(frozen=True)
class Hyperparameters:
    temperature: float = 0.0
    seed: int | None = None
    pre_retry: RetryPolicy = RetryPolicy()
    post_retry: RetryPolicy = RetryPolicy()
    max_calls: int = 16
    max_tokens: int = 1024

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_calls < 1:
            raise ValueError("max_calls (cost cap) must be >= 1")


@dataclass(frozen=True)
class Agent:
    """The agent tuple: generators, instructions, hyperparameters, types, contracts."""

    generators: tuple[GeneratorConfig, ...]
    instructions: tuple[str, ...] = ()
    hyperparameters: Hyperparameters = Hyperparameters()
    schemas: tuple[TypeSchema, ...] = ()
    contracts: tuple[Contract, ...] = ()
    id: str = "agent"

    def __post_init__(self):
        for name in ("generators", "instructions", "schemas", "contracts"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.generators:
            raise ValueError("an agent needs at least one generator")
        known = set(self.schemas)
        cap = self.hyperparameters.max_calls
        for c in self.contracts:
            used = [c.input_schema, c.output_schema] + ([c.act.schema] if c.act else [])
            for s in used:
                if s not in known:
                    raise ValueError(f"contract '{c.id}' uses schema '{s.name}' not declared by the agent")
            for label, policy in (("pre", c.pre_retry), ("post", c.post_retry)):
                if policy is not None and policy.max_attempts > cap:
                    raise ValueError(
                        f"contract '{c.id}' {label}_retry.max_attempts={policy.max_attempts} exceeds cost cap {cap}")

    def policies(self, contract: Contract) -> tuple[RetryPolicy, RetryPolicy]:
        hp = self.hyperparameters
        return contract.pre_retry or hp.pre_retry, contract.post_retry or hp.post_retry

    def contract(self, contract_id: str) -> Contract:
        for c in self.contracts:
            if c.id == contract_id:
                return c
        raise KeyError(contract_id)


def agent_for(contract: Contract, generator: GeneratorConfig | None = None,
              hyperparameters: Hyperparameters | None = None, instructions: Sequence[str] = (),
              id: str = "agent") -> Agent:
    """Smallest agent able to run ``contract``."""
    schemas = [contract.input_schema]
    for s in (contract.output_schema, contract.act.schema if contract.act else None):
        if s is not None and s not in schemas:
            schemas.append(s)
    return Agent(
        generators=(generator or GeneratorConfig("scripted"),),
        instructions=tuple(instructions),
        hyperparameters=hyperparameters or Hyperparameters(),
        schemas=tuple(schemas),
        contracts=(contract,),
        id=id,
    )


# --------------------------------------------------------------------------
# outcomes and traces


@dataclass(frozen=True)
class ContractOutcome:
    kind: str  # validated | degraded-raw | degraded-default | failed
    instance: Instance | None = None
    text: str | None = None
    error: str | None = None

    @property
    def validated(self) -> bool:
        return self.kind == "validated"


@dataclass(frozen=True)
class PhaseEntry:
    phase: str
    attempt: int
    outcome: str
    detail: str = ""


@dataclass
class ExecutionTrace:
    contract_id: str
    phases: list[PhaseEntry] = field(default_factory=list)
    error_history: ErrorHistory = field(default_factory=ErrorHistory)
    generator_calls: int = 0
    latency: float = 0.0  # generator-reported latency plus scheduled backoff, seconds
    wall_time: float = 0.0
    tokens_in: int = 0
    tokens_out: int = 0
    transport_errors: int = 0
    families: dict[str, bool] = field(default_factory=dict)
    input: Instance | None = None  # validated input, after any fixes
    output: Instance | None = None  # last well-typed output seen
    final: ContractOutcome | None = None
    stop_reason: str = ""
    finalizer_error: str = ""

    def log(self, phase: str, attempt: int, outcome: str, detail: str = "") -> None:
        self.phases.append(PhaseEntry(phase, attempt, outcome, detail))

    def phase_names(self) -> list[str]:
        return [p.phase for p in self.phases]

    def summary(self) -> dict:
        return {
            "record": "summary",
            "contract": self.contract_id,
            "outcome": self.final.kind if self.final else None,
            "generator_calls": self.generator_calls,
            "latency_ms": round(self.latency * 1000, 6),
            "tokens_in": self.tokens_in,
            "tokens_out": self.tokens_out,
            "transport_errors": self.transport_errors,
            "error_history": [r.to_dict() for r in self.error_history],
            "repeated_messages": self.error_history.repeated_messages(),
            "families": dict(self.families),
            "stop_reason": self.stop_reason,
            "finalizer_error": self.finalizer_error,
        }

    def jsonl_records(self, run: int | None = None) -> list[dict]:
        rows = []
        for p in self.phases:
            row = {"record": "phase", "contract": self.contract_id}
            if run is not None:
                row["run"] = run
            row.update(phase=p.phase, attempt=p.attempt, outcome=p.outcome)
            if p.detail:
                row["detail"] = p.detail
            rows.append(row)
        summary = self.summary()
        if run is not None:
            summary = {"record": "summary", "contract": self.contract_id, "run": run,
                       **{k: v for k, v in summary.items() if k not in ("record", "contract")}}
        rows.append(summary)
        return rows

    def to_jsonl(self, run: int | None = None) -> str:
        return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in self.jsonl_records(run))


# --------------------------------------------------------------------------
# individual phases


def check_preconditions(contract: Contract, input: Instance) -> list[tuple[str, str]]:
    """Evaluate every precondition; returns ``(name, message)`` for each failure."""
    return _failures(contract.preconditions, input, None)


def check_postconditions(contract: Contract, input: Instance, output: Instance) -> list[tuple[str, str]]:
    return _failures(contract.postconditions, input, output)


def _failures(predicates: Sequence[Predicate], input, output) -> list[tuple[str, str]]:
    out = []
    for p in predicates:
        msg = p.evaluate(input, output)
        if msg is not None:
            out.append((p.name, msg))
    return out


def apply_act(contract: Contract, input: Instance) -> Instance:
    if contract.act is None:
        return input
    try:
        result = contract.act.transform(input)
    except Exception as exc:
        raise ActError(f"act '{contract.act.name}' raised {type(exc).__name__}: {exc}") from exc
    value = result.value if isinstance(result, Instance) else result
    try:
        return Instance.of(contract.act.schema, value)
    except ParseError as exc:
        raise ActError(f"act '{contract.act.name}' produced an invalid value: {exc}") from None


@dataclass
class PartialState:
    """What an execution had reached when it stopped."""

    validated: Instance | None = None
    last_text: str | None = None
    error: str = ""
    generated: bool = False


def finalize(contract: Contract, state: PartialState, mode: FallbackMode | None = None,
             trace: ExecutionTrace | None = None) -> ContractOutcome:
    """Map ``state`` to an outcome and run the user finalizer hook exactly once."""
    mode = mode or contract.fallback
    if state.validated is not None:
        outcome = ContractOutcome("validated", instance=state.validated)
    elif mode.kind == "graceful-raw":
        outcome = ContractOutcome("degraded-raw", text=state.last_text or "", error=state.error)
    elif mode.kind == "graceful-default":
        outcome = ContractOutcome("degraded-default", instance=mode.default, error=state.error)
    else:
        outcome = ContractOutcome("failed", error=state.error or "contract failed")
    if contract.on_finalize is not None:
        try:
            contract.on_finalize(state.validated if state.validated is not None else outcome.error)
        except Exception as exc:
            if trace is not None:
                trace.finalizer_error = f"{type(exc).__name__}: {exc}"
    if trace is not None:
        trace.log("finalize", 1, outcome.kind)
        trace.final = outcome
    return outcome


# --------------------------------------------------------------------------
# the full flow


class _Abort(Exception):
    pass


class _Execution:
    def __init__(self, contract: Contract, agent: Agent, generator: Generator,
                 seed: int | None, sleep: Callable[[float], None]):
        self.contract = contract
        self.agent = agent
        self.generator = generator
        self.hp = agent.hyperparameters
        self.seed = self.hp.seed if seed is None else seed
        self.sleep = sleep
        self.pre_policy, self.post_policy = agent.policies(contract)
        self.trace = ExecutionTrace(contract.id)
        self.state = PartialState()
        self.family_pass: dict[str, bool] = {f: False for f in contract.families()}
        self.input_typed = False
        self.act_ok = False

    # -- helpers --

    def _call(self, prompt: str, phase: str, attempt: int) -> str | None:
        """One generator call; returns None after recording a transport error."""
        if self.trace.generator_calls >= self.hp.max_calls:
            self.trace.stop_reason = f"cost cap of {self.hp.max_calls} generator calls reached"
            raise _Abort(self.trace.stop_reason)
        self.trace.generator_calls += 1
        request = GeneratorRequest(prompt, self.hp.temperature, self.seed, self.hp.max_tokens)
        try:
            resp = self.generator.generate(request)
        except TransportError as exc:
            self.trace.transport_errors += 1
            self.trace.log(phase, attempt, "transport-error")
            self.trace.error_history.record(phase, "transport", "<generator>",
                                            str(exc) or type(exc).__name__)
            return None
        self.trace.latency += resp.latency
        self.trace.tokens_in += resp.tokens_in
        self.trace.tokens_out += resp.tokens_out
        self.trace.log(phase, attempt, "ok")
        return resp.text

    def _wait(self, policy: RetryPolicy, attempt: int) -> None:
        delay = next_delay(policy, attempt)
        self.trace.latency += delay
        if delay > 0:
            self.sleep(delay)

    def _note_families(self, predicates: Sequence[Predicate], failures: list[tuple[str, str]]) -> None:
        failed = {name for name, _ in failures}
        per_family: dict[str, bool] = {}
        for p in predicates:
            per_family[p.family] = per_family.get(p.family, True) and p.name not in failed
        self.family_pass.update(per_family)

    # -- phases --

    def input_phase(self, value: Any) -> Instance:
        c, history = self.contract, self.trace.error_history
        candidate = value
        for attempt in range(1, self.pre_policy.effective_attempts + 1):
            if attempt > 1:
                self._wait(self.pre_policy, attempt)
                prompt = build_corrective_prompt(
                    fix_base_prompt(c.input_schema, value, self._instructions()),
                    render_schema_prompt(c.input_schema), history)
                text = self._call(prompt, "fix-in", attempt)
                if text is None:
                    continue
                try:
                    candidate = extract_value(text)
                except ParseError as exc:
                    self.trace.log("type-in", attempt, "fail")
                    history.record_violation("type-in", exc.violation)
                    continue
            violations = validate_instance(c.input_schema, candidate)
            if violations:
                self.trace.log("type-in", attempt, "fail")
                history.record("type-in", "type-validation",
                               ",".join(dict.fromkeys(v.path or "<root>" for v in violations)),
                               "; ".join(v.message for v in violations))
                continue
            self.trace.log("type-in", attempt, "ok")
            inp = Instance.of(c.input_schema, candidate)
            failures = check_preconditions(c, inp)
            self._note_families(c.preconditions, failures)
            if not failures:
                self.trace.log("pre", attempt, "ok")
                self.input_typed = True
                self.trace.input = inp
                return inp
            self.trace.log("pre", attempt, "fail")
            history.record_predicates("pre", "precondition", failures)
        raise _Abort("input could not be validated against the contract")

    def act_phase(self, inp: Instance) -> Instance:
        if self.contract.act is None:
            self.trace.log("act", 1, "skip")
            self.act_ok = True
            return inp
        try:
            ctx = apply_act(self.contract, inp)
        except ActError as exc:
            self.trace.log("act", 1, "fail")
            self.trace.error_history.record("act", "act", self.contract.act.name, str(exc))
            raise _Abort(str(exc)) from None
        self.trace.log("act", 1, "ok")
        self.act_ok = True
        return ctx

    def output_phase(self, inp: Instance, ctx: Instance) -> Instance:
        c, history = self.contract, self.trace.error_history
        base = self._generation_prompt(ctx)
        schema_prompt = render_schema_prompt(c.output_schema)
        for attempt in range(1, self.post_policy.effective_attempts + 1):
            if attempt == 1:
                text = self._call(base + "\n\n" + schema_prompt, "generate", attempt)
            else:
                self._wait(self.post_policy, attempt)
                text = self._call(build_corrective_prompt(base, schema_prompt, history), "fix-out", attempt)
            if text is None:
                continue
            self.state.generated = True
            self.state.last_text = text
            try:
                out = parse_output(text, c.output_schema)
            except ParseError as exc:
                self.trace.log("type-out", attempt, "fail")
                history.record_violation("type-out", exc.violation, text)
                self.trace.output = None
                continue
            self.trace.log("type-out", attempt, "ok")
            self.trace.output = out
            failures = check_postconditions(c, inp, out)
            self._note_families(c.postconditions, failures)
            if not failures:
                self.trace.log("post", attempt, "ok")
                return out
            self.trace.log("post", attempt, "fail")
            history.record_predicates("post", "postcondition", failures, text)
        raise _Abort(f"output failed the contract after {self.trace.generator_calls} generator call(s)")

    def _instructions(self) -> str:
        return "\n".join(self.agent.instructions)

    def _generation_prompt(self, ctx: Instance) -> str:
        parts = [p for p in (self._instructions(), self.contract.prompt) if p]
        parts.append("Input:\n" + serialize_instance(ctx))
        return "\n".join(parts)

    def run(self, value: Any) -> ContractOutcome:
        start = time.perf_counter()
        try:
            inp = self.input_phase(value)
            ctx = self.act_phase(inp)
            self.state.validated = self.output_phase(inp, ctx)
        except _Abort as exc:
            self.state.error = str(exc)
        except Exception as exc:  # evaluator-independent bugs still end in finalize
            self.state.error = f"internal error: {type(exc).__name__}: {exc}"
            self.trace.stop_reason = self.state.error
        finally:
            self._settle_families()
            outcome = finalize(self.contract, self.state, self.contract.fallback, self.trace)
            self.trace.wall_time = time.perf_counter() - start
        return outcome

    def _settle_families(self) -> None:
        fam = self.family_pass
        if self.state.validated is not None:
            for k in fam:
                fam[k] = True
        else:
            fam[TYPING_FAMILY] = self.input_typed and self.act_ok and self.trace.output is not None
            # failures outside every predicate family (cost cap, internal error)
            if all(fam.values()):
                fam[TYPING_FAMILY] = False
        self.trace.families = dict(fam)


def execute(contract: Contract, agent: Agent, generator: Generator, input: Any, *,
            seed: int | None = None,
            sleep: Callable[[float], None] = time.sleep) -> tuple[ContractOutcome, ExecutionTrace]:
    """Run ``contract`` on ``input``.

    Returns ``(outcome, trace)``. In strict mode a failed contract raises
    :class:`ContractError` (carrying both) once finalization has completed;
    graceful modes never raise.
    """
    run = _Execution(contract, agent, generator, seed, sleep)
    outcome = run.run(input)
    if outcome.kind == "failed":
        raise ContractError(outcome, run.trace)
    return outcome, run.trace
