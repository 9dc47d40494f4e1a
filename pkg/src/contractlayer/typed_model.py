"""Schemas, typed instances, validation, prompt rendering and output parsing.

A ``TypeSchema`` is an ordered list of ``FieldSpec`` entries. Values are plain
JSON-like trees (dicts, lists, str, int, float, bool). ``validate_instance``
never short-circuits: every failing field and constraint yields its own
``Violation`` so that remediation prompts carry the full picture.
"""

from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

SCALAR_BASES = ("string", "integer", "real", "boolean", "enum")
BASES = SCALAR_BASES + ("nested", "list")
ITEM_BASES = SCALAR_BASES + ("nested",)
CONSTRAINT_KINDS = ("regex", "range", "length", "enum-members", "non-empty")
VIOLATION_KINDS = ("missing", "type-mismatch", "constraint", "parse")

MAX_DEPTH = 16

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_FENCE = re.compile(r"^```[^\n`]*\n(.*?)^```", re.DOTALL | re.MULTILINE)

# Which constraint kinds each base accepts. For lists, "enum-members" applies
# to the items (list-of-enum only) and length/non-empty to the list itself.
_COMPATIBLE = {
    "string": {"regex", "length", "non-empty"},
    "integer": {"range"},
    "real": {"range"},
    "boolean": set(),
    "enum": {"enum-members"},
    "nested": set(),
    "list": {"length", "non-empty", "enum-members"},
}


@dataclass(frozen=True)
class Constraint:
    kind: str
    min: float | None = None
    max: float | None = None
    pattern: str | None = None
    members: tuple[str, ...] = ()

    @classmethod
    def regex(cls, pattern: str) -> Constraint:
        return cls("regex", pattern=pattern)

    @classmethod
    def range(cls, min: float | None = None, max: float | None = None) -> Constraint:
        return cls("range", min=min, max=max)

    @classmethod
    def length(cls, min: int | None = None, max: int | None = None) -> Constraint:
        return cls("length", min=min, max=max)

    @classmethod
    def enum(cls, members: Iterable[str]) -> Constraint:
        return cls("enum-members", members=tuple(members))

    @classmethod
    def non_empty(cls) -> Constraint:
        return cls("non-empty")

    def describe(self) -> str:
        if self.kind == "regex":
            return f"regex {self.pattern}"
        if self.kind in ("range", "length"):
            lo = "-inf" if self.min is None else _num(self.min)
            hi = "+inf" if self.max is None else _num(self.max)
            return f"{self.kind} [{lo}, {hi}]"
        if self.kind == "enum-members":
            return "one of " + ", ".join(json.dumps(m) for m in self.members)
        return self.kind


@dataclass(frozen=True)
class FieldSpec:
    name: str
    base: str
    optional: bool = False
    description: str = ""
    constraints: tuple[Constraint, ...] = ()
    items: str | None = None  # item base for lists
    schema: TypeSchema | None = None  # for nested fields and lists of nested

    def type_label(self) -> str:
        if self.base == "nested":
            return f"object {self.schema.name}" if self.schema else "object"
        if self.base == "list":
            if self.items == "nested" and self.schema is not None:
                return f"list of object {self.schema.name}"
            return f"list of {self.items}"
        return self.base


@dataclass(frozen=True)
class TypeSchema:
    name: str
    fields: tuple[FieldSpec, ...] = ()
    description: str = ""

    def field_names(self) -> list[str]:
        return [f.name for f in self.fields]


@dataclass(frozen=True)
class Violation:
    path: str
    kind: str
    message: str
    details: tuple[Violation, ...] = ()


class ParseError(ValueError):
    """Generator text could not be turned into a well-typed instance."""

    def __init__(self, violation: Violation):
        super().__init__(violation.message)
        self.violation = violation


class SchemaError(ValueError):
    pass


# --------------------------------------------------------------------------
# schema checking


def check_schema(schema: TypeSchema) -> list[str]:
    """Return schema-definition errors; an empty list means the schema is usable."""
    errors: list[str] = []
    _check_schema(schema, 1, [], errors)
    return errors


def _check_schema(schema: TypeSchema, depth: int, stack: list[int], errors: list[str]) -> None:
    if id(schema) in stack:
        errors.append(f"schema '{schema.name}': self-referential nesting")
        return
    if depth > MAX_DEPTH:
        errors.append(f"schema '{schema.name}': nesting depth exceeds {MAX_DEPTH}")
        return
    if not _IDENT.match(schema.name or ""):
        errors.append(f"schema '{schema.name}': name is not an identifier")
    seen: set[str] = set()
    for f in schema.fields:
        where = f"schema '{schema.name}' field '{f.name}'"
        if not _IDENT.match(f.name or ""):
            errors.append(f"{where}: name is not an identifier")
        if f.name in seen:
            errors.append(f"{where}: duplicate field name '{f.name}'")
        seen.add(f.name)
        if f.base not in BASES:
            errors.append(f"{where}: unknown base '{f.base}'")
            continue
        if f.base == "list" and f.items not in ITEM_BASES:
            errors.append(f"{where}: list item base must be one of {', '.join(ITEM_BASES)}")
        elem = f.items if f.base == "list" else f.base
        if f.base != "list" and f.items is not None:
            errors.append(f"{where}: 'items' is only valid on list fields")
        if elem == "nested":
            if f.schema is None:
                errors.append(f"{where}: nested field without a schema")
            else:
                _check_schema(f.schema, depth + 1, stack + [id(schema)], errors)
        elif f.schema is not None:
            errors.append(f"{where}: schema given for non-nested field")
        allowed = _COMPATIBLE[f.base]
        enum_count = 0
        for c in f.constraints:
            if c.kind not in CONSTRAINT_KINDS:
                errors.append(f"{where}: unknown constraint kind '{c.kind}'")
                continue
            if c.kind not in allowed or (
                f.base == "list" and c.kind == "enum-members" and f.items != "enum"
            ):
                errors.append(f"{where}: constraint '{c.kind}' is incompatible with base '{f.base}'")
            if c.kind == "regex":
                try:
                    re.compile(c.pattern or "")
                except re.error as exc:
                    errors.append(f"{where}: invalid regex {c.pattern!r}: {exc}")
                if c.pattern is None:
                    errors.append(f"{where}: regex constraint without a pattern")
            elif c.kind in ("range", "length"):
                if c.min is not None and c.max is not None and c.min > c.max:
                    errors.append(f"{where}: {c.kind} min <= max violated ({_num(c.min)} > {_num(c.max)})")
                if c.kind == "length" and any(
                    b is not None and (b < 0 or b != int(b)) for b in (c.min, c.max)
                ):
                    errors.append(f"{where}: length bounds must be non-negative integers")
            elif c.kind == "enum-members":
                enum_count += 1
                if len(c.members) < 1:
                    errors.append(f"{where}: enum constraint needs at least one member")
        if elem == "enum" and enum_count != 1:
            errors.append(f"{where}: enum fields need exactly one enum-members constraint")
    return


def schema_depth(schema: TypeSchema) -> int:
    nested = [f.schema for f in schema.fields if f.schema is not None]
    return 1 + max((schema_depth(s) for s in nested), default=0)


# --------------------------------------------------------------------------
# validation


def validate_instance(schema: TypeSchema, value: Any) -> list[Violation]:
    """Check ``value`` against ``schema``; returns every violation found."""
    out: list[Violation] = []
    _validate_object(schema, value, "", out)
    return out


def _join(path: str, name: str) -> str:
    return f"{path}.{name}" if path else name


def _show(path: str) -> str:
    return path or "<root>"


def _type_name(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, int):
        return "integer"
    if isinstance(value, float):
        return "real"
    if isinstance(value, str):
        return "string"
    if isinstance(value, list):
        return "list"
    if isinstance(value, dict):
        return "object"
    return type(value).__name__


def _validate_object(schema: TypeSchema, value: Any, path: str, out: list[Violation]) -> None:
    if not isinstance(value, dict):
        out.append(Violation(path, "type-mismatch",
                             f"{_show(path)}: expected object {schema.name}, got {_type_name(value)}"))
        return
    for f in schema.fields:
        p = _join(path, f.name)
        v = value.get(f.name)
        if v is None:
            if not f.optional:
                out.append(Violation(p, "missing", f"{p}: required field is missing"))
            continue
        _validate_field(f, v, p, out)
    known = set(schema.field_names())
    for key in value:
        if key not in known:
            out.append(Violation(path, "type-mismatch",
                                 f"{_show(path)}: unexpected field {key!r} not in {schema.name}"))


def _scalar_ok(base: str, v: Any) -> bool:
    if base in ("string", "enum"):
        return isinstance(v, str)
    if base == "integer":
        return isinstance(v, int) and not isinstance(v, bool)
    if base == "real":
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return False
        return math.isfinite(v)
    if base == "boolean":
        return isinstance(v, bool)
    return False


def _validate_field(f: FieldSpec, v: Any, path: str, out: list[Violation]) -> None:
    if f.base == "nested":
        _validate_object(f.schema, v, path, out)
        return
    if f.base == "list":
        if not isinstance(v, list):
            out.append(Violation(path, "type-mismatch", f"{path}: expected list, got {_type_name(v)}"))
            return
        for c in f.constraints:
            if c.kind != "enum-members":
                _apply(c, v, path, out)
        for i, item in enumerate(v):
            ip = f"{path}[{i}]"
            if item is None:
                out.append(Violation(ip, "type-mismatch", f"{ip}: expected {f.items}, got null"))
            elif f.items == "nested":
                _validate_object(f.schema, item, ip, out)
            elif not _scalar_ok(f.items, item):
                out.append(Violation(ip, "type-mismatch", f"{ip}: expected {f.items}, got {_type_name(item)}"))
            else:
                for c in f.constraints:
                    if c.kind == "enum-members":
                        _apply(c, item, ip, out)
        return
    if not _scalar_ok(f.base, v):
        out.append(Violation(path, "type-mismatch", f"{path}: expected {f.base}, got {_type_name(v)}"))
        return
    for c in f.constraints:
        _apply(c, v, path, out)


def _apply(c: Constraint, v: Any, path: str, out: list[Violation]) -> None:
    msg = _constraint_failure(c, v)
    if msg is not None:
        out.append(Violation(path, "constraint", f"{path}: {msg}"))


def _constraint_failure(c: Constraint, v: Any) -> str | None:
    if c.kind == "regex":
        if re.search(c.pattern, v) is None:
            return f"value {v!r} does not match regex {c.pattern}"
    elif c.kind == "range":
        if (c.min is not None and v < c.min) or (c.max is not None and v > c.max):
            return f"value {_num(v)} outside {c.describe()}"
    elif c.kind == "length":
        n = len(v)
        if (c.min is not None and n < c.min) or (c.max is not None and n > c.max):
            return f"length {n} outside {c.describe()}"
    elif c.kind == "enum-members":
        if v not in c.members:
            return f"value {v!r} is not {c.describe()}"
    elif c.kind == "non-empty":
        if len(v) == 0:
            return "must be non-empty"
    return None


def _num(x: float) -> str:
    if isinstance(x, float) and x.is_integer():
        return str(int(x)) if abs(x) < 1e15 else repr(x)
    return repr(x)


# --------------------------------------------------------------------------
# instances


@dataclass(frozen=True)
class Instance:
    """A value tree that is known to satisfy its schema.

    Build through :meth:`of` (or :func:`parse_output`); the stored value is a
    private normalized copy: keys in schema order, absent optionals dropped,
    reals stored as floats.
    """

    schema: TypeSchema
    value: dict = field(compare=True)

    @classmethod
    def of(cls, schema: TypeSchema, value: Any) -> Instance:
        violations = validate_instance(schema, value)
        if violations:
            raise ParseError(_summary_violation(schema, violations))
        return cls(schema, _normalize_object(schema, value))

    def __getitem__(self, key: str) -> Any:
        return self.value[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self.value.get(key, default)


def _normalize_object(schema: TypeSchema, value: Mapping) -> dict:
    out = {}
    for f in schema.fields:
        v = value.get(f.name)
        if v is None:
            continue
        out[f.name] = _normalize_field(f, v)
    return out


def _normalize_field(f: FieldSpec, v: Any) -> Any:
    if f.base == "nested":
        return _normalize_object(f.schema, v)
    if f.base == "list":
        if f.items == "nested":
            return [_normalize_object(f.schema, item) for item in v]
        if f.items == "real":
            return [float(item) for item in v]
        return list(v)
    if f.base == "real":
        return float(v)
    return copy.copy(v)


def serialize_instance(instance: Instance) -> str:
    """Canonical JSON: schema field order, compact separators, UTF-8 text."""
    return json.dumps(instance.value, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


# --------------------------------------------------------------------------
# parsing generator text


def extract_candidate(text: str) -> str | None:
    """Return the region of ``text`` that should hold the serialized object.

    The first fenced code block wins; otherwise the first balanced ``{...}``
    literal (string-aware, so braces inside JSON strings do not count).
    """
    m = _FENCE.search(text)
    if m:
        return m.group(1)
    start = text.find("{")
    while start != -1:
        end = _balanced_end(text, start)
        if end is not None:
            return text[start:end]
        start = text.find("{", start + 1)
    return None


def _balanced_end(text: str, start: int) -> int | None:
    depth = 0
    in_str = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_str:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return i + 1
    return None


def extract_value(text: str) -> Any:
    """Deserialize the candidate region of ``text`` without validating it."""
    region = extract_candidate(text)
    if region is None:
        raise ParseError(Violation("", "parse", "no JSON object found in the output"))
    try:
        return json.loads(region)
    except json.JSONDecodeError as exc:
        raise ParseError(Violation("", "parse", f"output is not valid JSON: {exc}")) from None


def parse_output(text: str, schema: TypeSchema) -> Instance:
    """Turn generator text into a well-typed instance or raise :class:`ParseError`."""
    value = extract_value(text)
    return Instance.of(schema, value)


def _summary_violation(schema: TypeSchema, violations: list[Violation]) -> Violation:
    lines = "; ".join(v.message for v in violations)
    return Violation("", "parse", f"output does not conform to {schema.name}: {lines}", tuple(violations))


# --------------------------------------------------------------------------
# prompt rendering


def render_schema_prompt(schema: TypeSchema) -> str:
    lines = [f"Output type: {schema.name}"]
    if schema.description:
        lines.append(f"Description: {schema.description}")
    lines.append("Fields:")
    if schema.fields:
        _render_fields(schema, 1, lines)
    else:
        lines.append("  (none; answer with an empty object)")
    lines.append(
        "Answer with a single JSON object that matches this type, "
        "inside one ```json fenced code block. Do not add fields that are not listed."
    )
    return "\n".join(lines) + "\n"


def _render_fields(schema: TypeSchema, depth: int, lines: list[str]) -> None:
    pad = "  " * depth
    for f in schema.fields:
        head = f"{pad}- {f.name} ({f.type_label()}, {'optional' if f.optional else 'required'})"
        if f.description:
            head += f": {f.description}"
        lines.append(head)
        if f.constraints:
            lines.append(f"{pad}  constraints: " + "; ".join(c.describe() for c in f.constraints))
        if f.schema is not None:
            _render_fields(f.schema, depth + 1, lines)


# --------------------------------------------------------------------------
# schema files


def schema_from_dict(data: Mapping, registry: Mapping[str, Mapping] | None = None,
                     _stack: tuple[str, ...] = ()) -> TypeSchema:
    """Build a schema from its JSON document form.

    Nested schemas are given inline or, when ``registry`` is provided, by name.
    Raises :class:`SchemaError` on malformed documents or reference cycles.
    """
    if not isinstance(data, Mapping):
        raise SchemaError("schema document must be an object")
    try:
        name = data["name"]
    except KeyError:
        raise SchemaError("schema document lacks 'name'") from None
    if name in _stack:
        raise SchemaError(f"schema '{name}' references itself via {' -> '.join(_stack + (name,))}")
    if len(_stack) >= MAX_DEPTH:
        raise SchemaError(f"schema '{name}': nesting depth exceeds {MAX_DEPTH}")
    fields = []
    for fd in data.get("fields", []):
        if not isinstance(fd, Mapping) or "name" not in fd or "base" not in fd:
            raise SchemaError(f"schema '{name}': each field needs 'name' and 'base'")
        sub = fd.get("schema")
        nested = None
        if sub is not None:
            if isinstance(sub, str):
                if registry is None or sub not in registry:
                    raise SchemaError(f"schema '{name}' field '{fd['name']}': unknown schema reference '{sub}'")
                sub = registry[sub]
            nested = schema_from_dict(sub, registry, _stack + (name,))
        fields.append(FieldSpec(
            name=fd["name"],
            base=fd["base"],
            optional=bool(fd.get("optional", False)),
            description=fd.get("description", ""),
            constraints=tuple(_constraint_from_dict(c, name, fd["name"]) for c in fd.get("constraints", [])),
            items=fd.get("items"),
            schema=nested,
        ))
    return TypeSchema(name=name, fields=tuple(fields), description=data.get("description", ""))


def _constraint_from_dict(c: Mapping, schema: str, fname: str) -> Constraint:
    kind = c.get("kind") if isinstance(c, Mapping) else None
    if kind not in CONSTRAINT_KINDS:
        raise SchemaError(f"schema '{schema}' field '{fname}': unknown constraint {c!r}")
    return Constraint(
        kind=kind,
        min=c.get("min"),
        max=c.get("max"),
        pattern=c.get("pattern"),
        members=tuple(c.get("members", ())),
    )


def schema_to_dict(schema: TypeSchema) -> dict:
    return {
        "name": schema.name,
        "description": schema.description,
        "fields": [_field_to_dict(f) for f in schema.fields],
    }


def _field_to_dict(f: FieldSpec) -> dict:
    d: dict[str, Any] = {
        "name": f.name,
        "base": f.base,
        "optional": f.optional,
        "description": f.description,
        "constraints": [_constraint_to_dict(c) for c in f.constraints],
    }
    if f.items is not None:
        d["items"] = f.items
    if f.schema is not None:
        d["schema"] = schema_to_dict(f.schema)
    return d


def _constraint_to_dict(c: Constraint) -> dict:
    d: dict[str, Any] = {"kind": c.kind}
    if c.kind == "regex":
        d["pattern"] = c.pattern
    elif c.kind in ("range", "length"):
        d["min"] = c.min
        d["max"] = c.max
    elif c.kind == "enum-members":
        d["members"] = list(c.members)
    return d
