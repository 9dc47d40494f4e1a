import pytest
from hypothesis import given
from hypothesis import strategies as st

from contractlayer.generators import ScriptedGenerator, ScriptEntry
from contractlayer.remediation import (
    CORRECTION_FOOTER,
    CORRECTION_HEADER,
    ErrorHistory,
    RemediationExhausted,
    RetryPolicy,
    build_corrective_prompt,
    fix_instance,
    next_delay,
)
from contractlayer.typed_model import Constraint, FieldSpec, TypeSchema

SCHEMA = TypeSchema("Reply", (FieldSpec("n", "integer", constraints=(Constraint.range(0, 9),)),))


def _history(k):
    h = ErrorHistory()
    for i in range(k):
        h.record("type-out", "type-validation", "n", f"n: value {10 + i} outside range [0, 9]")
    return h


@pytest.mark.parametrize("initial, factor, cap, attempt, expected", [
    (0.1, 2, 30.0, 2, 0.1),
    (0.1, 2, 30.0, 4, 0.4),
    (0.1, 10, 0.5, 4, 0.5),
])
def test_next_delay_examples(initial, factor, cap, attempt, expected):
    policy = RetryPolicy(max_attempts=5, initial_delay=initial, backoff_factor=factor, max_delay=cap)
    assert next_delay(policy, attempt) == pytest.approx(expected)


@given(
    st.integers(2, 12),
    st.floats(0, 5, allow_nan=False),
    st.floats(1, 4, allow_nan=False),
    st.floats(5, 50, allow_nan=False),
)
def test_next_delay_closed_form(attempt, initial, factor, cap):
    policy = RetryPolicy(max_attempts=12, initial_delay=initial, backoff_factor=factor, max_delay=cap)
    d = next_delay(policy, attempt)
    assert d == min(initial * factor ** (attempt - 2), cap)
    assert 0 <= d <= cap


def test_next_delay_rejects_out_of_range_attempt():
    with pytest.raises(ValueError):
        next_delay(RetryPolicy(max_attempts=3), 1)
    with pytest.raises(ValueError):
        next_delay(RetryPolicy(max_attempts=3), 4)


def test_policy_invariants():
    with pytest.raises(ValueError):
        RetryPolicy(max_attempts=0)
    with pytest.raises(ValueError):
        RetryPolicy(initial_delay=5, max_delay=1)
    with pytest.raises(ValueError):
        RetryPolicy(backoff_factor=0.5)


def test_prompt_one_record():
    text = build_corrective_prompt("Base.", "Schema.", _history(1))
    assert text.count("attempt 1 failed") == 1
    assert text.count(" failed: ") == 1


def test_prompt_three_records_in_order():
    text = build_corrective_prompt("Base.", "Schema.", _history(3))
    positions = [text.index(f"attempt {k} failed") for k in (1, 2, 3)]
    assert positions == sorted(positions)


def test_prompt_deterministic():
    h = _history(2)
    assert build_corrective_prompt("B", "S", h) == build_corrective_prompt("B", "S", h)


def test_prompt_layout_golden():
    text = build_corrective_prompt("Summarize the text.", "Output type: Reply\n", _history(2))
    assert text == (
        "Summarize the text.\n"
        "\n"
        "Output type: Reply\n"
        "\n"
        f"{CORRECTION_HEADER}\n"
        "attempt 1 failed: type-validation n: n: value 10 outside range [0, 9]\n"
        "attempt 2 failed: type-validation n: n: value 11 outside range [0, 9]\n"
        f"{CORRECTION_FOOTER}\n"
    )


def test_prompt_requires_history():
    with pytest.raises(ValueError):
        build_corrective_prompt("B", "S", ErrorHistory())


def test_history_excerpt_capped_and_attempts_increase():
    h = ErrorHistory()
    h.record("type-out", "parse", "", "bad", raw_text="x" * 2000)
    h.record("post", "postcondition", "p", "bad")
    assert len(h[0].raw_excerpt) == 512
    assert [r.attempt for r in h] == [1, 2]
    assert h.repeated_messages() == ["bad"]
    with pytest.raises(ValueError):
        h.record("post", "postcondition", "p", "")


def test_fix_valid_on_first_attempt():
    h = _history(1)
    gen = ScriptedGenerator(['{"n": 3}'])
    inst = fix_instance(SCHEMA, {"n": 10}, h, gen, RetryPolicy(max_attempts=3))
    assert inst.value == {"n": 3}
    assert len(h) == 1 and gen.calls == 1


def test_fix_invalid_invalid_valid():
    h = _history(1)
    gen = ScriptedGenerator(['{"n": 12}', "nothing", '{"n": 4}'])
    inst = fix_instance(SCHEMA, {"n": 10}, h, gen, RetryPolicy(max_attempts=3), sleep=lambda s: None)
    assert inst.value == {"n": 4}
    assert len(h) == 3 and gen.calls == 3
    assert [r.source for r in h][1:] == ["type-validation", "parse"]
    # the third prompt carries both failures of this loop
    assert "attempt 2 failed" in gen.prompts[2] and "attempt 3 failed" in gen.prompts[2]


def test_fix_exhausted():
    h = _history(1)
    gen = ScriptedGenerator([ScriptEntry('{"n": 99}', repeat=True)])
    with pytest.raises(RemediationExhausted) as exc:
        fix_instance(SCHEMA, {"n": 10}, h, gen, RetryPolicy(max_attempts=2), sleep=lambda s: None)
    assert len(exc.value.history) == 3 and gen.calls == 2


def test_fix_transport_error_consumes_attempt():
    h = _history(1)
    gen = ScriptedGenerator([])
    with pytest.raises(RemediationExhausted):
        fix_instance(SCHEMA, "{}", h, gen, RetryPolicy(max_attempts=2), sleep=lambda s: None)
    assert [r.source for r in h][1:] == ["transport", "transport"]


def test_fix_prompt_monotone():
    h = _history(1)
    gen = ScriptedGenerator(["a", "b", "c", '{"n": 1}'])
    fix_instance(SCHEMA, "{}", h, gen, RetryPolicy(max_attempts=4), sleep=lambda s: None)
    for earlier, later in zip(gen.prompts, gen.prompts[1:]):
        lines = [ln for ln in earlier.splitlines() if " failed: " in ln]
        assert all(ln in later for ln in lines)


def test_fix_sleeps_per_schedule():
    slept = []
    gen = ScriptedGenerator(["x", "y", '{"n": 1}'])
    policy = RetryPolicy(max_attempts=3, initial_delay=0.1, backoff_factor=3, max_delay=1)
    fix_instance(SCHEMA, "{}", _history(1), gen, policy, sleep=slept.append)
    assert slept == pytest.approx([0.1, 0.3])


def test_readme_documents_template_verbatim():
    from pathlib import Path

    from contractlayer.remediation import CORRECTION_FOOTER, CORRECTION_HEADER

    readme = (Path(__file__).resolve().parent.parent / "README.md").read_text(encoding="utf-8")
    assert f"\n\n{CORRECTION_HEADER}\nattempt 1 failed: " in readme
    assert f": <message>\n{CORRECTION_FOOTER}\n```" in readme
