"""Suite files: schemas, contracts and generator configs in one JSON document.

Predicates come from a closed declarative vocabulary; arbitrary evaluator
functions are only available to library users building ``Contract`` objects
directly.
"""

from __future__ import annotations

import json
import operator
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .contract import (
    Act,
    Agent,
    Contract,
    FallbackMode,
    Hyperparameters,
    Predicate,
    graceful_default,
)
from .generators import GENERATOR_KINDS, GeneratorConfig
from .metrics import DEFAULT_THRESHOLD
from .remediation import RetryPolicy
from .typed_model import (
    FieldSpec,
    Instance,
    ParseError,
    SchemaError,
    TypeSchema,
    check_schema,
    schema_from_dict,
    schema_to_dict,
)

PREDICATE_KINDS = (
    "regex-match",
    "field-equals",
    "length-bound",
    "numeric-range",
    "cross-field-comparison",
    "output-references-input-field",
)
ACT_KINDS = ("lowercase", "uppercase", "strip")
COMPARATORS = {
    "<": operator.lt,
    "<=": operator.le,
    "==": operator.eq,
    "!=": operator.ne,
    ">": operator.gt,
    ">=": operator.ge,
}
_MISSING = object()


class SuiteError(ValueError):
    pass


# --------------------------------------------------------------------------
# declarative specs


@dataclass(frozen=True)
class PredicateSpec:
    name: str
    kind: str
    family: str = "default"
    target: str = "output"
    params: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: Mapping) -> PredicateSpec:
        if not isinstance(d, Mapping) or "name" not in d or "kind" not in d:
            raise SuiteError(f"predicate entries need 'name' and 'kind': {d!r}")
        params = {k: v for k, v in d.items() if k not in ("name", "kind", "family", "target")}
        target = d.get("target", "input+output" if d["kind"] == "output-references-input-field" else "output")
        return cls(d["name"], d["kind"], d.get("family", "default"), target, params)

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "family": self.family, "target": self.target,
                **self.params}


@dataclass(frozen=True)
class ActSpec:
    kind: str
    fields: tuple[str, ...]
    schema: str | None = None

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind, "fields": list(self.fields)}
        if self.schema is not None:
            d["schema"] = self.schema
        return d


@dataclass(frozen=True)
class ContractSpec:
    id: str
    input_schema: str
    output_schema: str
    prompt: str = ""
    preconditions: tuple[PredicateSpec, ...] = ()
    postconditions: tuple[PredicateSpec, ...] = ()
    act: ActSpec | None = None
    pre_retry: RetryPolicy | None = None
    post_retry: RetryPolicy | None = None
    fallback: Mapping[str, Any] = field(default_factory=lambda: {"mode": "strict"})
    inputs: tuple[Any, ...] = ()
    generators: Mapping[str, GeneratorConfig] = field(default_factory=dict)
    threshold: float | None = None


@dataclass(frozen=True)
class RunConfig:
    runs: int = 100
    seed: int = 0
    threshold: float = DEFAULT_THRESHOLD
    backend: str = "scripted"
    workers: int = 1


@dataclass(frozen=True)
class SuiteFile:
    name: str
    schemas: tuple[TypeSchema, ...]
    contracts: tuple[ContractSpec, ...]
    generators: Mapping[str, GeneratorConfig] = field(default_factory=dict)
    agent_id: str = "agent"
    instructions: tuple[str, ...] = ()
    hyperparameters: Hyperparameters = Hyperparameters()
    run: RunConfig = RunConfig()
    report_path: str | None = None
    trace_path: str | None = None

    def schema(self, name: str) -> TypeSchema:
        for s in self.schemas:
            if s.name == name:
                return s
        raise SuiteError(f"unknown schema reference '{name}'")

    def contract_spec(self, contract_id: str) -> ContractSpec:
        for c in self.contracts:
            if c.id == contract_id:
                return c
        raise SuiteError(f"unknown contract '{contract_id}'")

    def generator_config(self, spec: ContractSpec, backend: str) -> GeneratorConfig:
        config = spec.generators.get(backend) or self.generators.get(backend)
        if config is None:
            raise SuiteError(f"contract '{spec.id}': no '{backend}' generator configured")
        return config

    def build_contract(self, spec: ContractSpec) -> Contract:
        return compile_contract(spec, self)

    def build_agent(self) -> Agent:
        configs = list(self.generators.values())
        for c in self.contracts:
            configs += [g for g in c.generators.values() if g not in configs]
        if not configs:
            raise SuiteError("suite declares no generators")
        try:
            return Agent(
                generators=tuple(configs),
                instructions=self.instructions,
                hyperparameters=self.hyperparameters,
                schemas=self.schemas,
                contracts=tuple(self.build_contract(c) for c in self.contracts),
                id=self.agent_id,
            )
        except ValueError as exc:
            if isinstance(exc, SuiteError):
                raise
            raise SuiteError(str(exc)) from None

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "name": self.name,
            "schemas": [schema_to_dict(s) for s in self.schemas],
            "agent": {
                "id": self.agent_id,
                "instructions": list(self.instructions),
                "hyperparameters": _hyper_to_dict(self.hyperparameters),
            },
            "generators": {k: g.to_dict() for k, g in self.generators.items()},
            "contracts": [_contract_spec_to_dict(c) for c in self.contracts],
            "run": {
                "runs": self.run.runs,
                "seed": self.run.seed,
                "threshold": self.run.threshold,
                "backend": self.run.backend,
                "workers": self.run.workers,
            },
        }
        output = {}
        if self.report_path is not None:
            output["report"] = self.report_path
        if self.trace_path is not None:
            output["trace"] = self.trace_path
        if output:
            d["output"] = output
        return d


# --------------------------------------------------------------------------
# loading


def load_suite(path: str | Path) -> SuiteFile:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise SuiteError(f"cannot read suite {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise SuiteError(f"suite {path} is not valid JSON: {exc}") from None
    return suite_from_dict(data, base_dir=path.parent)


def suite_from_dict(data: Mapping, base_dir: Path | None = None) -> SuiteFile:
    if not isinstance(data, Mapping):
        raise SuiteError("suite document must be an object")
    try:
        return _suite_from_dict(data, base_dir)
    except SuiteError:
        raise
    except (SchemaError, KeyError, TypeError, ValueError) as exc:
        raise SuiteError(f"invalid suite: {exc}") from None


def _suite_from_dict(data: Mapping, base_dir: Path | None) -> SuiteFile:
    docs = data.get("schemas", [])
    registry = {}
    for d in docs:
        if not isinstance(d, Mapping) or "name" not in d:
            raise SuiteError("every schema needs a 'name'")
        if d["name"] in registry:
            raise SuiteError(f"duplicate schema '{d['name']}'")
        registry[d["name"]] = d
    schemas = []
    for d in docs:
        s = schema_from_dict(d, registry)
        errors = check_schema(s)
        if errors:
            raise SuiteError("; ".join(errors))
        schemas.append(s)

    agent = data.get("agent", {})
    generators = {k: _generator(k, v, base_dir) for k, v in (data.get("generators") or {}).items()}
    contracts = []
    seen = set()
    for cd in data.get("contracts", []):
        spec = _contract_spec(cd, base_dir)
        if spec.id in seen:
            raise SuiteError(f"duplicate contract id '{spec.id}'")
        seen.add(spec.id)
        contracts.append(spec)
    run = data.get("run", {})
    run_config = RunConfig(
        runs=int(run.get("runs", 100)),
        seed=int(run.get("seed", 0)),
        threshold=float(run.get("threshold", DEFAULT_THRESHOLD)),
        backend=run.get("backend", "scripted"),
        workers=int(run.get("workers", 1)),
    )
    if run_config.backend not in GENERATOR_KINDS:
        raise SuiteError(f"unknown backend '{run_config.backend}'")
    output = data.get("output", {})
    suite = SuiteFile(
        name=data.get("name", "suite"),
        schemas=tuple(schemas),
        contracts=tuple(contracts),
        generators=generators,
        agent_id=agent.get("id", "agent"),
        instructions=tuple(agent.get("instructions", ())),
        hyperparameters=_hyper_from_dict(agent.get("hyperparameters", {})),
        run=run_config,
        report_path=output.get("report"),
        trace_path=output.get("trace"),
    )
    for spec in suite.contracts:
        compile_contract(spec, suite)  # resolve references and type-check predicates up front
    return suite


def _generator(kind: str, d: Mapping, base_dir: Path | None) -> GeneratorConfig:
    if kind not in GENERATOR_KINDS:
        raise SuiteError(f"unknown generator backend '{kind}'")
    d = dict(d)
    d.setdefault("kind", kind)
    if d["kind"] != kind:
        raise SuiteError(f"generator under '{kind}' declares kind '{d['kind']}'")
    return GeneratorConfig.from_dict(d, base_dir)


def _policy(d: Mapping | None) -> RetryPolicy | None:
    if d is None:
        return None
    return RetryPolicy(
        max_attempts=int(d.get("max_attempts", 3)),
        initial_delay=float(d.get("initial_delay", 0.0)),
        backoff_factor=float(d.get("backoff_factor", 2.0)),
        max_delay=float(d.get("max_delay", 30.0)),
        remediation_enabled=bool(d.get("remediation_enabled", True)),
    )


def _policy_to_dict(p: RetryPolicy) -> dict:
    return {
        "max_attempts": p.max_attempts,
        "initial_delay": p.initial_delay,
        "backoff_factor": p.backoff_factor,
        "max_delay": p.max_delay,
        "remediation_enabled": p.remediation_enabled,
    }


def _hyper_from_dict(d: Mapping) -> Hyperparameters:
    return Hyperparameters(
        temperature=float(d.get("temperature", 0.0)),
        seed=d.get("seed"),
        pre_retry=_policy(d.get("pre_retry")) or RetryPolicy(),
        post_retry=_policy(d.get("post_retry")) or RetryPolicy(),
        max_calls=int(d.get("max_calls", 16)),
        max_tokens=int(d.get("max_tokens", 1024)),
    )


def _hyper_to_dict(h: Hyperparameters) -> dict:
    return {
        "temperature": h.temperature,
        "seed": h.seed,
        "pre_retry": _policy_to_dict(h.pre_retry),
        "post_retry": _policy_to_dict(h.post_retry),
        "max_calls": h.max_calls,
        "max_tokens": h.max_tokens,
    }


def _contract_spec(d: Mapping, base_dir: Path | None) -> ContractSpec:
    for key in ("id", "input_schema", "output_schema"):
        if key not in d:
            raise SuiteError(f"contract entry lacks '{key}': {d.get('id', '?')}")
    act = d.get("act")
    act_spec = None
    if act is not None:
        act_spec = ActSpec(act.get("kind"), tuple(act.get("fields", ())), act.get("schema"))
    return ContractSpec(
        id=d["id"],
        input_schema=d["input_schema"],
        output_schema=d["output_schema"],
        prompt=d.get("prompt", ""),
        preconditions=tuple(PredicateSpec.from_dict(p) for p in d.get("preconditions", [])),
        postconditions=tuple(PredicateSpec.from_dict(p) for p in d.get("postconditions", [])),
        act=act_spec,
        pre_retry=_policy(d.get("pre_retry")),
        post_retry=_policy(d.get("post_retry")),
        fallback=dict(d.get("fallback", {"mode": "strict"})),
        inputs=tuple(d.get("inputs", ())),
        generators={k: _generator(k, v, base_dir) for k, v in (d.get("generators") or {}).items()},
        threshold=None if d.get("threshold") is None else float(d["threshold"]),
    )


def _contract_spec_to_dict(c: ContractSpec) -> dict:
    d: dict[str, Any] = {
        "id": c.id,
        "input_schema": c.input_schema,
        "output_schema": c.output_schema,
        "prompt": c.prompt,
        "preconditions": [p.to_dict() for p in c.preconditions],
        "postconditions": [p.to_dict() for p in c.postconditions],
        "fallback": dict(c.fallback),
        "inputs": list(c.inputs),
    }
    if c.act is not None:
        d["act"] = c.act.to_dict()
    if c.pre_retry is not None:
        d["pre_retry"] = _policy_to_dict(c.pre_retry)
    if c.post_retry is not None:
        d["post_retry"] = _policy_to_dict(c.post_retry)
    if c.generators:
        d["generators"] = {k: g.to_dict() for k, g in c.generators.items()}
    if c.threshold is not None:
        d["threshold"] = c.threshold
    return d


# --------------------------------------------------------------------------
# compiling specs into live contracts


def compile_contract(spec: ContractSpec, suite: SuiteFile) -> Contract:
    input_schema = suite.schema(spec.input_schema)
    output_schema = suite.schema(spec.output_schema)
    schemas = {"input": input_schema, "output": output_schema}
    pre = []
    for p in spec.preconditions:
        if p.target != "input":
            raise SuiteError(f"contract '{spec.id}' precondition '{p.name}' must target the input")
        pre.append(compile_predicate(p, schemas, spec.id))
    post = [compile_predicate(p, schemas, spec.id) for p in spec.postconditions]
    act = compile_act(spec.act, input_schema, suite, spec.id) if spec.act else None
    fallback = _fallback(spec, output_schema)
    try:
        return Contract(
            id=spec.id,
            input_schema=input_schema,
            output_schema=output_schema,
            prompt=spec.prompt,
            preconditions=tuple(pre),
            postconditions=tuple(post),
            act=act,
            pre_retry=spec.pre_retry,
            post_retry=spec.post_retry,
            fallback=fallback,
        )
    except ValueError as exc:
        raise SuiteError(str(exc)) from None


def _fallback(spec: ContractSpec, schema: TypeSchema) -> FallbackMode:
    mode = spec.fallback.get("mode", "strict")
    if mode == "graceful-default":
        try:
            return graceful_default(Instance.of(schema, spec.fallback.get("default")))
        except ParseError as exc:
            raise SuiteError(f"contract '{spec.id}': fallback default is not well-typed: {exc}") from None
    if mode not in ("strict", "graceful-raw"):
        raise SuiteError(f"contract '{spec.id}': unknown fallback mode '{mode}'")
    return FallbackMode(mode)


def compile_act(spec: ActSpec, input_schema: TypeSchema, suite: SuiteFile, cid: str) -> Act:
    if spec.kind not in ACT_KINDS:
        raise SuiteError(f"contract '{cid}': unknown act kind '{spec.kind}'")
    schema = suite.schema(spec.schema) if spec.schema else input_schema
    for name in spec.fields:
        f = _resolve_field(input_schema, name)
        if f is None or f.base != "string":
            raise SuiteError(f"contract '{cid}': act field '{name}' is not a string field of {input_schema.name}")
    fn = {"lowercase": str.lower, "uppercase": str.upper, "strip": str.strip}[spec.kind]
    fields = spec.fields

    def transform(inst: Instance) -> dict:
        value = json.loads(json.dumps(inst.value))
        for name in fields:
            _update_path(value, name, fn)
        return value

    return Act(schema, transform, name=spec.kind, spec=spec)


def _update_path(value: dict, path: str, fn) -> None:
    parts = path.split(".")
    for p in parts[:-1]:
        value = value.get(p)
        if not isinstance(value, dict):
            return
    if isinstance(value.get(parts[-1]), str):
        value[parts[-1]] = fn(value[parts[-1]])


def _resolve_field(schema: TypeSchema, path: str) -> FieldSpec | None:
    current = schema
    found = None
    for part in path.split("."):
        if current is None:
            return None
        found = next((f for f in current.fields if f.name == part), None)
        if found is None:
            return None
        current = found.schema if found.base == "nested" else None
    return found


def _lookup(value: Any, path: str) -> Any:
    for part in path.split("."):
        if not isinstance(value, Mapping) or part not in value:
            return _MISSING
        value = value[part]
    return value


def _split_target(path: str, target: str, schemas: Mapping[str, TypeSchema]) -> tuple[str, str]:
    """Return (side, path-within-side) for a field reference."""
    if target == "input+output":
        side, _, rest = path.partition(".")
        if side not in ("input", "output") or not rest:
            raise SuiteError(f"field '{path}' must start with 'input.' or 'output.'")
        return side, rest
    return target, path


def compile_predicate(spec: PredicateSpec, schemas: Mapping[str, TypeSchema], cid: str) -> Predicate:
    if spec.kind not in PREDICATE_KINDS:
        raise SuiteError(f"contract '{cid}' predicate '{spec.name}': unknown kind '{spec.kind}'")
    if spec.target not in ("input", "output", "input+output"):
        raise SuiteError(f"contract '{cid}' predicate '{spec.name}': unknown target '{spec.target}'")
    where = f"contract '{cid}' predicate '{spec.name}'"
    prm = spec.params

    def field_of(key: str, bases: tuple[str, ...]) -> tuple[str, str]:
        path = prm.get(key)
        if not isinstance(path, str):
            raise SuiteError(f"{where}: missing '{key}'")
        try:
            side, rest = _split_target(path, spec.target, schemas)
        except SuiteError as exc:
            raise SuiteError(f"{where}: {exc}") from None
        f = _resolve_field(schemas[side], rest)
        if f is None:
            raise SuiteError(f"{where}: unknown field '{path}' in {schemas[side].name}")
        if bases and f.base not in bases:
            raise SuiteError(f"{where}: field '{path}' has base '{f.base}', expected one of {', '.join(bases)}")
        return side, rest

    def getter(side: str, rest: str):
        if spec.target == "input+output":
            idx = 0 if side == "input" else 1
            return lambda args: _lookup(args[idx].value, rest)
        return lambda args: _lookup(args[0].value, rest)

    kind = spec.kind
    if kind == "regex-match":
        get = getter(*field_of("field", ("string", "enum")))
        pattern = prm.get("pattern")
        try:
            rx = re.compile(pattern)
        except (re.error, TypeError) as exc:
            raise SuiteError(f"{where}: invalid pattern {pattern!r}: {exc}") from None
        label = prm["field"]

        def check(*args):
            v = _present(get(args), label)
            if rx.search(v) is None:
                raise AssertionError(f"{label} = {v!r} does not match /{pattern}/")

    elif kind == "field-equals":
        get = getter(*field_of("field", ("string", "integer", "real", "boolean", "enum")))
        if "value" not in prm:
            raise SuiteError(f"{where}: missing 'value'")
        expected, label = prm["value"], prm["field"]

        def check(*args):
            v = _present(get(args), label)
            if v != expected:
                raise AssertionError(f"{label} = {v!r}, expected {expected!r}")

    elif kind == "length-bound":
        get = getter(*field_of("field", ("string", "list")))
        lo, hi, label = prm.get("min"), prm.get("max"), prm["field"]
        _bounds(lo, hi, where)

        def check(*args):
            n = len(_present(get(args), label))
            if (lo is not None and n < lo) or (hi is not None and n > hi):
                raise AssertionError(f"{label} has length {n}, allowed [{lo}, {hi}]")

    elif kind == "numeric-range":
        get = getter(*field_of("field", ("integer", "real")))
        lo, hi, label = prm.get("min"), prm.get("max"), prm["field"]
        _bounds(lo, hi, where)

        def check(*args):
            v = _present(get(args), label)
            if (lo is not None and v < lo) or (hi is not None and v > hi):
                raise AssertionError(f"{label} = {v!r} outside [{lo}, {hi}]")

    elif kind == "cross-field-comparison":
        comparable = ("string", "integer", "real", "enum", "boolean")
        left = getter(*field_of("left", comparable))
        right = getter(*field_of("right", comparable))
        op = prm.get("op")
        if op not in COMPARATORS:
            raise SuiteError(f"{where}: unknown comparison '{op}'")
        cmp, lname, rname = COMPARATORS[op], prm["left"], prm["right"]

        def check(*args):
            a, b = _present(left(args), lname), _present(right(args), rname)
            try:
                ok = cmp(a, b)
            except TypeError:
                raise AssertionError(f"cannot compare {lname} = {a!r} with {rname} = {b!r}") from None
            if not ok:
                raise AssertionError(f"{lname} {op} {rname} violated ({a!r} vs {b!r})")

    else:  # output-references-input-field
        if spec.target != "input+output":
            raise SuiteError(f"{where}: output-references-input-field needs target input+output")
        out_path, in_path = prm.get("output_field"), prm.get("input_field")
        for key, path in (("output_field", out_path), ("input_field", in_path)):
            if not isinstance(path, str):
                raise SuiteError(f"{where}: missing '{key}'")
        fo = _resolve_field(schemas["output"], out_path)
        fi = _resolve_field(schemas["input"], in_path)
        if fo is None or fo.base != "string" or fi is None or fi.base not in ("string", "enum"):
            raise SuiteError(f"{where}: output_field and input_field must be string fields")

        def check(inp, out):
            o = _present(_lookup(out.value, out_path), f"output.{out_path}")
            i = _present(_lookup(inp.value, in_path), f"input.{in_path}")
            if i not in o:
                raise AssertionError(f"output.{out_path} does not mention input.{in_path} ({i!r})")

    return Predicate(spec.name, check, spec.family, spec.target, spec=spec)


def _present(v: Any, label: str) -> Any:
    if v is _MISSING or v is None:
        raise AssertionError(f"{label} is absent")
    return v


def _bounds(lo, hi, where: str) -> None:
    if lo is None and hi is None:
        raise SuiteError(f"{where}: needs 'min' and/or 'max'")
    if lo is not None and hi is not None and lo > hi:
        raise SuiteError(f"{where}: min > max")
