"""Bounded retry loops that feed accumulated validation errors back to the generator."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Any, Callable, Iterator

from .generators import Generator, GeneratorRequest, TransportError
from .typed_model import Instance, ParseError, TypeSchema, Violation, parse_output, render_schema_prompt

EXCERPT_LIMIT = 512
SOURCES = ("type-validation", "precondition", "postcondition", "parse", "transport", "act")

CORRECTION_HEADER = "Previous attempts were rejected for the following reasons:"
CORRECTION_FOOTER = (
    "Produce a corrected object that fixes every problem listed above. "
    "Answer with a single JSON object only."
)


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    initial_delay: float = 0.0  # seconds
    backoff_factor: float = 2.0
    max_delay: float = 30.0
    remediation_enabled: bool = True

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.backoff_factor < 1:
            raise ValueError("backoff_factor must be >= 1")
        if self.initial_delay < 0 or self.initial_delay > self.max_delay:
            raise ValueError("need 0 <= initial_delay <= max_delay")

    @property
    def effective_attempts(self) -> int:
        return self.max_attempts if self.remediation_enabled else 1


def next_delay(policy: RetryPolicy, attempt: int) -> float:
    """Delay in seconds to wait before ``attempt`` (2-based; the first try never waits)."""
    if attempt < 2 or attempt > policy.max_attempts:
        raise ValueError(f"attempt must lie in [2, {policy.max_attempts}], got {attempt}")
    return min(policy.initial_delay * policy.backoff_factor ** (attempt - 2), policy.max_delay)


@dataclass(frozen=True)
class ErrorRecord:
    attempt: int
    phase: str
    source: str
    predicate_or_path: str
    message: str
    raw_excerpt: str = ""

    def line(self) -> str:
        return f"attempt {self.attempt} failed: {self.source} {self.predicate_or_path}: {self.message}"

    def to_dict(self) -> dict:
        return {
            "attempt": self.attempt,
            "phase": self.phase,
            "source": self.source,
            "predicate_or_path": self.predicate_or_path,
            "message": self.message,
            "raw_excerpt": self.raw_excerpt,
        }


class ErrorHistory:
    """Append-only list of failed attempts within one execution.

    ``attempt`` numbers are assigned here: the n-th recorded failure of an
    execution is attempt n. Inside a single retry loop this equals the loop's
    own attempt counter because a loop stops at its first success.
    """

    def __init__(self, records: list[ErrorRecord] | None = None):
        self._records: list[ErrorRecord] = list(records or [])

    def record(self, phase: str, source: str, predicate_or_path: str, message: str,
               raw_text: str = "") -> ErrorRecord:
        if not message:
            raise ValueError("error records need a message")
        rec = ErrorRecord(
            attempt=len(self._records) + 1,
            phase=phase,
            source=source,
            predicate_or_path=predicate_or_path or "<root>",
            message=message,
            raw_excerpt=raw_text[:EXCERPT_LIMIT],
        )
        self._records.append(rec)
        return rec

    def record_violation(self, phase: str, violation: Violation, raw_text: str = "") -> ErrorRecord:
        """One record per attempt: field violations are folded into a single entry."""
        if violation.details:
            paths = ",".join(dict.fromkeys(v.path or "<root>" for v in violation.details))
            message = "; ".join(v.message for v in violation.details)
            return self.record(phase, "type-validation", paths, message, raw_text)
        return self.record(phase, "parse", violation.path, violation.message, raw_text)

    def record_predicates(self, phase: str, source: str, failures: list[tuple[str, str]],
                          raw_text: str = "") -> ErrorRecord:
        names = ",".join(name for name, _ in failures)
        message = "; ".join(msg for _, msg in failures)
        return self.record(phase, source, names, message, raw_text)

    @property
    def records(self) -> tuple[ErrorRecord, ...]:
        return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[ErrorRecord]:
        return iter(self._records)

    def __getitem__(self, i: int) -> ErrorRecord:
        return self._records[i]

    def repeated_messages(self) -> list[str]:
        """Messages that occurred more than once; a cheap hint of cyclic errors."""
        seen: dict[str, int] = {}
        for r in self._records:
            seen[r.message] = seen.get(r.message, 0) + 1
        return [m for m, n in seen.items() if n > 1]


def build_corrective_prompt(base_prompt: str, schema_prompt: str, history: ErrorHistory) -> str:
    if not len(history):
        raise ValueError("a corrective prompt needs a non-empty error history")
    parts = [base_prompt.rstrip("\n"), "", schema_prompt.rstrip("\n"), "", CORRECTION_HEADER]
    parts.extend(r.line() for r in history)
    parts.append(CORRECTION_FOOTER)
    return "\n".join(parts) + "\n"


class RemediationExhausted(Exception):
    def __init__(self, history: ErrorHistory, calls: int):
        super().__init__(f"remediation exhausted after {calls} attempt(s)")
        self.history = history
        self.calls = calls


def fix_instance(
    target_schema: TypeSchema,
    candidate: Any,
    history: ErrorHistory,
    generator: Generator,
    policy: RetryPolicy,
    *,
    instructions: str = "",
    temperature: float = 0.0,
    seed: int | None = None,
    max_tokens: int = 1024,
    sleep: Callable[[float], None] = time.sleep,
    phase: str = "fix-out",
) -> Instance:
    """Ask the generator to repair ``candidate`` until it is well-typed.

    Each attempt is one whole-object generator call with the full error
    history in the prompt. Transport errors are recorded and use up the
    attempt. Raises :class:`RemediationExhausted` when attempts run out.
    """
    if not policy.remediation_enabled:
        raise ValueError("remediation is disabled by the policy")
    base = fix_base_prompt(target_schema, candidate, instructions)
    schema_prompt = render_schema_prompt(target_schema)
    for attempt in range(1, policy.max_attempts + 1):
        if attempt > 1:
            sleep(next_delay(policy, attempt))
        prompt = build_corrective_prompt(base, schema_prompt, history)
        try:
            response = generator.generate(GeneratorRequest(prompt, temperature, seed, max_tokens))
        except TransportError as exc:
            history.record(phase, "transport", "<generator>", str(exc) or type(exc).__name__)
            continue
        try:
            return parse_output(response.text, target_schema)
        except ParseError as exc:
            history.record_violation(phase, exc.violation, response.text)
    raise RemediationExhausted(history, policy.max_attempts)


def fix_base_prompt(schema: TypeSchema, candidate: Any, instructions: str = "") -> str:
    if isinstance(candidate, Instance):
        shown = candidate.value
    else:
        shown = candidate
    if not isinstance(shown, str):
        shown = json.dumps(shown, ensure_ascii=False, default=repr)
    head = f"{instructions.rstrip()}\n" if instructions else ""
    return f"{head}Repair the following {schema.name} object so that it satisfies its type.\nObject:\n{shown}"
