"""Generator backends: a scripted mock, a seeded Bernoulli mock and an HTTP client.

Every backend exposes ``generate(request) -> GeneratorResponse`` and raises a
:class:`TransportError` subclass when no text can be produced. None of them
retry internally; attempt accounting belongs to the remediation loop.
"""

from __future__ import annotations

import json
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

API_KEY_ENV = "CONTRACT_API_KEY"
GENERATOR_KINDS = ("scripted", "bernoulli", "http")


class TransportError(Exception):
    """The generator could not produce text for a request."""


class GeneratorTimeout(TransportError):
    pass


class UpstreamStatusError(TransportError):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"upstream returned HTTP {status}: {body[:200]}")
        self.status = status


class MalformedResponse(TransportError):
    pass


class ScriptExhausted(TransportError):
    """No remaining script entry matches the prompt."""


@dataclass(frozen=True)
class GeneratorRequest:
    prompt: str
    temperature: float = 0.0
    seed: int | None = None
    max_tokens: int = 1024

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class GeneratorResponse:
    text: str
    tokens_in: int = 0
    tokens_out: int = 0
    latency: float = 0.0  # seconds


class Generator(Protocol):
    def generate(self, request: GeneratorRequest) -> GeneratorResponse: ...


def _word_count(text: str) -> int:
    return len(text.split())


# --------------------------------------------------------------------------
# scripted mock


@dataclass(frozen=True)
class ScriptEntry:
    response: str
    match: str | None = None
    repeat: bool = False

    def matches(self, prompt: str) -> bool:
        return self.match is None or self.match in prompt


def replay_script(path: str | os.PathLike) -> list[ScriptEntry]:
    """Load a script file: a JSON list of ``{"match"?: str, "response": str, "repeat"?: bool}``."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed script {path}: {exc}") from None
    return script_from_list(data, source=str(path))


def script_from_list(data: Any, source: str = "<script>") -> list[ScriptEntry]:
    if not isinstance(data, list):
        raise ValueError(f"malformed script {source}: expected a list of entries")
    entries = []
    for i, item in enumerate(data):
        if isinstance(item, str):
            entries.append(ScriptEntry(item))
            continue
        if not isinstance(item, Mapping) or not isinstance(item.get("response"), str):
            raise ValueError(f"malformed script {source}: entry {i} needs a string 'response'")
        match = item.get("match")
        if match is not None and not isinstance(match, str):
            raise ValueError(f"malformed script {source}: entry {i} 'match' must be a string")
        entries.append(ScriptEntry(item["response"], match, bool(item.get("repeat", False))))
    return entries


class ScriptedGenerator:
    """Serves scripted responses in order.

    Each call takes the first unconsumed entry whose ``match`` substring occurs
    in the prompt (entries without ``match`` fit any prompt). ``repeat``
    entries are never consumed. When nothing fits, :class:`ScriptExhausted`
    is raised. The cursor is shared and lock-protected.
    """

    def __init__(self, entries: Sequence[ScriptEntry | str]):
        self.entries = [e if isinstance(e, ScriptEntry) else ScriptEntry(e) for e in entries]
        self._used = [False] * len(self.entries)
        self._lock = threading.Lock()
        self.calls = 0
        self.prompts: list[str] = []

    def generate(self, request: GeneratorRequest) -> GeneratorResponse:
        with self._lock:
            self.calls += 1
            self.prompts.append(request.prompt)
            for i, entry in enumerate(self.entries):
                if self._used[i] or not entry.matches(request.prompt):
                    continue
                if not entry.repeat:
                    self._used[i] = True
                return GeneratorResponse(entry.response, _word_count(request.prompt),
                                         _word_count(entry.response), 0.0)
        raise ScriptExhausted(f"script has no entry left for call {self.calls}")

    def for_run(self, seed: int) -> ScriptedGenerator:
        """A fresh replay of the same script, so independent runs see identical behaviour."""
        return ScriptedGenerator(self.entries)


# --------------------------------------------------------------------------
# Bernoulli mock


@dataclass(frozen=True)
class FamilySpec:
    p: float
    corrupt: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"family pass probability must lie in [0, 1], got {self.p}")


class BernoulliGenerator:
    """Seeded stochastic mock.

    Each call draws one pass/fail per family (``p`` is the pass probability).
    All passes yield ``valid`` serialized; otherwise the output is ``valid``
    with a failing family's ``corrupt`` overrides merged in. In ``"one"`` mode
    a single failing family is picked by the same RNG; ``"all"`` mode applies
    the overrides of every failing family. Call ``k`` uses an RNG seeded from
    ``(seed, k)``, so the sequence only depends on the seed and call count.
    """

    def __init__(self, valid: Mapping[str, Any], families: Mapping[str, FamilySpec],
                 seed: int = 0, corrupt_mode: str = "one"):
        if corrupt_mode not in ("one", "all"):
            raise ValueError("corrupt_mode must be 'one' or 'all'")
        self.valid = dict(valid)
        self.families = {k: families[k] for k in sorted(families)}
        self.seed = seed
        self.corrupt_mode = corrupt_mode
        self._lock = threading.Lock()
        self._next = 0

    def draw(self, index: int) -> list[str]:
        """Names of the families that fail on call ``index``."""
        rng = random.Random(f"{self.seed}:{index}")
        failing = [name for name, spec in self.families.items() if not rng.random() < spec.p]
        if self.corrupt_mode == "one" and len(failing) > 1:
            failing = [rng.choice(failing)]
        return failing

    def render(self, failing: Sequence[str]) -> str:
        value = dict(self.valid)
        for name in failing:
            value.update(self.families[name].corrupt)
        return json.dumps(value, separators=(",", ":"), ensure_ascii=False)

    def generate(self, request: GeneratorRequest) -> GeneratorResponse:
        with self._lock:
            index = self._next
            self._next += 1
        text = self.render(self.draw(index))
        return GeneratorResponse(text, _word_count(request.prompt), _word_count(text), 0.0)

    def for_run(self, seed: int) -> BernoulliGenerator:
        return BernoulliGenerator(self.valid, self.families, seed, self.corrupt_mode)


# --------------------------------------------------------------------------
# OpenAI-compatible HTTP client


class HttpGenerator:
    """One chat-completion call per request against ``{endpoint}/v1/chat/completions``."""

    def __init__(self, endpoint: str, model: str, *, temperature: float | None = None,
                 timeout: float = 60.0, max_in_flight: int = 4, api_key: str | None = None,
                 client: Any = None):
        import httpx

        if timeout <= 0:
            raise ValueError("timeout must be > 0")
        self.url = endpoint.rstrip("/") + "/v1/chat/completions"
        self.model = model
        self.temperature = temperature
        self.timeout = timeout
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self._client = client or httpx.Client(timeout=timeout)
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._httpx = httpx

    def payload(self, request: GeneratorRequest) -> dict:
        body: dict[str, Any] = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": self.temperature if self.temperature is not None else request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.seed is not None:
            body["seed"] = request.seed
        return body

    def generate(self, request: GeneratorRequest) -> GeneratorResponse:
        httpx = self._httpx
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        start = time.perf_counter()
        with self._slots:
            try:
                resp = self._client.post(self.url, json=self.payload(request), headers=headers,
                                         timeout=self.timeout)
            except httpx.TimeoutException as exc:
                raise GeneratorTimeout(f"request timed out after {self.timeout}s") from exc
            except httpx.HTTPError as exc:
                raise TransportError(f"transport failure: {exc}") from exc
        latency = time.perf_counter() - start
        if not 200 <= resp.status_code < 300:
            raise UpstreamStatusError(resp.status_code, resp.text)
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"malformed upstream body: {exc!r}") from None
        if not isinstance(text, str):
            raise MalformedResponse("choices[0].message.content is not a string")
        usage = body.get("usage") or {}
        return GeneratorResponse(
            text,
            int(usage.get("prompt_tokens") or 0),
            int(usage.get("completion_tokens") or 0),
            latency,
        )

    def for_run(self, seed: int) -> HttpGenerator:
        return self


# --------------------------------------------------------------------------
# configs


@dataclass(frozen=True)
class GeneratorConfig:
    """Declarative description of a backend; see :func:`build_generator`."""

    kind: str
    script: tuple[ScriptEntry, ...] = ()
    valid: Mapping[str, Any] = field(default_factory=dict)
    families: Mapping[str, FamilySpec] = field(default_factory=dict)
    seed: int = 0
    corrupt_mode: str = "one"
    endpoint: str = ""
    model: str = ""
    temperature: float | None = None
    timeout: float = 60.0
    max_in_flight: int = 4

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.kind == "http" and not (self.endpoint and self.model):
            raise ValueError("http generators need an endpoint and a model")
        if self.kind == "bernoulli" and self.corrupt_mode not in ("one", "all"):
            raise ValueError("corrupt_mode must be 'one' or 'all'")

    @classmethod
    def from_dict(cls, data: Mapping, base_dir: Path | None = None) -> GeneratorConfig:
        kind = data.get("kind")
        if kind == "scripted":
            script = data.get("script", [])
            if isinstance(script, str):
                path = Path(script)
                if base_dir is not None and not path.is_absolute():
                    path = base_dir / path
                entries = replay_script(path)
            else:
                entries = script_from_list(script)
            return cls(kind, script=tuple(entries))
        if kind == "bernoulli":
            fams = {}
            for name, spec in (data.get("families") or {}).items():
                fams[name] = FamilySpec(float(spec["p"]), dict(spec.get("corrupt", {})))
            return cls(kind, valid=dict(data.get("valid", {})), families=fams,
                       seed=int(data.get("seed", 0)), corrupt_mode=data.get("corrupt_mode", "one"))
        if kind == "http":
            return cls(kind, endpoint=data.get("endpoint", ""), model=data.get("model", ""),
                       temperature=data.get("temperature"), timeout=float(data.get("timeout", 60.0)),
                       max_in_flight=int(data.get("max_in_flight", 4)))
        raise ValueError(f"unknown generator kind {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "scripted":
            entries = []
            for e in self.script:
                d: dict[str, Any] = {"response": e.response}
                if e.match is not None:
                    d["match"] = e.match
                if e.repeat:
                    d["repeat"] = True
                entries.append(d)
            return {"kind": "scripted", "script": entries}
        if self.kind == "bernoulli":
            return {
                "kind": "bernoulli",
                "valid": dict(self.valid),
                "families": {k: {"p": v.p, "corrupt": dict(v.corrupt)} for k, v in self.families.items()},
                "seed": self.seed,
                "corrupt_mode": self.corrupt_mode,
            }
        return {
            "kind": "http",
            "endpoint": self.endpoint,
            "model": self.model,
            "temperature": self.temperature,
            "timeout": self.timeout,
            "max_in_flight": self.max_in_flight,
        }


def build_generator(config: GeneratorConfig, *, client: Any = None) -> Generator:
    if config.kind == "scripted":
        return ScriptedGenerator(config.script)
    if config.kind == "bernoulli":
        return BernoulliGenerator(config.valid, config.families, config.seed, config.corrupt_mode)
    return HttpGenerator(config.endpoint, config.model, temperature=config.temperature,
                         timeout=config.timeout, max_in_flight=config.max_in_flight, client=client)
