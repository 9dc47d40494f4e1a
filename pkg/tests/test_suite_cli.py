import copy
import json
from pathlib import Path

import httpx
import pytest

from contractlayer import cli
from contractlayer.suite import SuiteError, load_suite, suite_from_dict
from contractlayer.typed_model import Instance

SUITES = Path(__file__).resolve().parent.parent / "suites"
CONTACTS = SUITES / "contacts.json"
COIN = SUITES / "coin.json"


def doc(path=CONTACTS):
    return json.loads(path.read_text(encoding="utf-8"))


def write(tmp_path, data, name="suite.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data), encoding="utf-8")
    return p


# -- run: exit statuses ----------------------------------------------------------------

def test_exit_zero_when_thresholds_met(tmp_path):
    report = tmp_path / "r.json"
    assert cli.run_suite(CONTACTS, runs=20, report=report) == cli.EXIT_OK
    out = json.loads(report.read_text())
    assert out["reports"][0]["p_succ"] == 1.0 and out["reports"][0]["meets_threshold"]


def test_exit_one_when_threshold_missed(tmp_path):
    data = doc(COIN)
    data["contracts"][0]["threshold"] = 0.9
    report = tmp_path / "r.json"
    assert cli.run_suite(write(tmp_path, data), runs=2000, report=report) == cli.EXIT_THRESHOLD
    entry = json.loads(report.read_text())["reports"][0]
    assert abs(entry["p_succ"] - 0.75) < 0.05 and entry["meets_threshold"] is False


def test_exit_two_on_missing_schema_reference(tmp_path, capsys):
    data = doc()
    data["contracts"][0]["output_schema"] = "Kontakt"
    assert cli.main(["run", "--suite", str(write(tmp_path, data))]) == cli.EXIT_CONFIG
    assert "Kontakt" in capsys.readouterr().err


@pytest.mark.parametrize("mutate, needle", [
    (lambda d: d["contracts"][0]["postconditions"][0].update(kind="telepathy"), "telepathy"),
    (lambda d: d["contracts"][0]["postconditions"][0].update(field="nope"), "nope"),
    (lambda d: d["contracts"][0]["postconditions"][0].update(pattern="(unclosed"), "invalid pattern"),
    (lambda d: d["contracts"][0].update(fallback={"mode": "graceful-default", "default": {"name": 3}}), "default"),
    (lambda d: d["contracts"][0].update(post_retry={"max_attempts": 99}), "max_attempts"),
    (lambda d: d["run"].update(backend="carrier-pigeon"), "carrier-pigeon"),
    (lambda d: d["schemas"].append(copy.deepcopy(d["schemas"][0])), "duplicate schema"),
    (lambda d: d["contracts"][0].update(act={"kind": "strip", "fields": ["missing"]}), "missing"),
])
def test_config_errors_name_the_culprit(tmp_path, capsys, mutate, needle):
    data = doc()
    mutate(data)
    assert cli.main(["run", "--suite", str(write(tmp_path, data)), "--runs", "1"]) == cli.EXIT_CONFIG
    assert needle in capsys.readouterr().err


def test_unreadable_suite_exit_two(tmp_path, capsys):
    assert cli.main(["run", "--suite", str(tmp_path / "absent.json")]) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{nope", encoding="utf-8")
    assert cli.main(["explain", "--suite", str(bad), "--contract", "x"]) == cli.EXIT_CONFIG


def test_backend_without_generator_exit_two(tmp_path, capsys):
    data = doc(COIN)
    assert cli.main(["run", "--suite", str(write(tmp_path, data)), "--backend", "scripted"]) == cli.EXIT_CONFIG
    assert "scripted" in capsys.readouterr().err


# -- run: reports and traces -----------------------------------------------------------

def test_reports_are_byte_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        cli.run_suite(CONTACTS, runs=300, seed=5, backend="bernoulli", report=path)
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.json"
    cli.run_suite(CONTACTS, runs=300, seed=6, backend="bernoulli", report=c)
    assert c.read_bytes() != a.read_bytes()


def test_report_to_stdout_and_flags(capsys):
    assert cli.main(["run", "--suite", str(CONTACTS), "--runs", "3", "--seed", "9"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert (out["suite"], out["backend"], out["runs"], out["seed"]) == ("contacts", "scripted", 3, 9)
    assert out["reports"][0]["n"] == 3


def test_trace_jsonl(tmp_path):
    trace = tmp_path / "t.jsonl"
    cli.run_suite(CONTACTS, runs=4, report=tmp_path / "r.json", trace=trace)
    records = [json.loads(line) for line in trace.read_text().splitlines()]
    summaries = [r for r in records if r["record"] == "summary"]
    assert [s["run"] for s in summaries] == [0, 1, 2, 3]
    assert all(s["outcome"] == "validated" and s["generator_calls"] == 2 for s in summaries)
    phases = [r["phase"] for r in records if r["record"] == "phase" and r["run"] == 0]
    assert phases == ["type-in", "pre", "act", "generate", "type-out", "fix-out", "type-out", "post", "finalize"]


def test_http_backend_through_cli(tmp_path, monkeypatch):
    monkeypatch.setenv("CONTRACT_API_KEY", "sk-test")
    seen = []

    def handler(request):
        seen.append(request)
        body = {"choices": [{"message": {"content": '{"name": "Ada Lovelace", "email": "ada@example.org"}'}}],
                "usage": {"prompt_tokens": 10, "completion_tokens": 5}}
        return httpx.Response(200, json=body)

    client = httpx.Client(transport=httpx.MockTransport(handler))
    report = tmp_path / "r.json"
    assert cli.run_suite(CONTACTS, runs=3, backend="http", report=report, client=client) == 0
    assert len(seen) == 3
    assert seen[0].url.path == "/v1/chat/completions"
    assert seen[0].headers["authorization"] == "Bearer sk-test"
    entry = json.loads(report.read_text())["reports"][0]
    assert entry["cost"]["mean_tokens_in"] == 10


# -- explain ---------------------------------------------------------------------------

def test_explain_lists_predicates_and_act(capsys):
    assert cli.main(["explain", "--suite", str(CONTACTS), "--contract", "extract_contact"]) == 0
    text = capsys.readouterr().out
    assert "act: present (strip: text)" in text
    assert "org_domain [family: format]" in text and "name_in_text [family: grounding]" in text
    assert "fallback: strict" in text and "Output type: Contact" in text
    assert "post retry: max_attempts=3" in text


def test_explain_one_predicate_no_act():
    text = cli.explain_contract(COIN, "answer42")
    lines = [ln for ln in text.splitlines() if "[family:" in ln]
    assert lines == ["  - is42 [family: correct] target=output field-equals"]
    assert "act: absent" in text


def test_explain_byte_identical():
    assert cli.explain_contract(CONTACTS, "extract_contact").encode() == \
        cli.explain_contract(CONTACTS, "extract_contact").encode()


def test_explain_unknown_contract(capsys):
    assert cli.main(["explain", "--suite", str(CONTACTS), "--contract", "ghost"]) == cli.EXIT_CONFIG
    assert "ghost" in capsys.readouterr().err


# -- suite model -----------------------------------------------------------------------

@pytest.mark.parametrize("path", [CONTACTS, COIN])
def test_suite_round_trip(path):
    suite = load_suite(path)
    again = suite_from_dict(json.loads(json.dumps(suite.to_dict())), base_dir=path.parent)
    assert again == suite


def test_script_file_reference(tmp_path):
    (tmp_path / "script.json").write_text(json.dumps([{"response": '{"answer": 42}', "repeat": True}]))
    data = doc(COIN)
    data["generators"]["scripted"] = {"script": "script.json"}
    suite = load_suite(write(tmp_path, data))
    assert suite.generators["scripted"].script[0].repeat
    assert cli.run_suite(tmp_path / "suite.json", runs=5, backend="scripted",
                         report=tmp_path / "r.json") == 0


def _predicate(kind_doc, target_values):
    data = doc()
    data["contracts"][0]["postconditions"] = [kind_doc]
    suite = suite_from_dict(data)
    contract = suite.build_contract(suite.contracts[0])
    inp = Instance.of(contract.input_schema, {"sender": "Ada Lovelace", "text": "hello"})
    out = Instance.of(contract.output_schema, target_values)
    return contract.postconditions[0].evaluate(inp, out)


GOOD = {"name": "Ada Lovelace", "email": "ada@example.org"}
BAD = {"name": "Grace", "email": "grace@navy.mil", "urgent": True}


@pytest.mark.parametrize("spec", [
    {"name": "p", "kind": "regex-match", "field": "email", "pattern": "org$"},
    {"name": "p", "kind": "field-equals", "field": "name", "value": "Ada Lovelace"},
    {"name": "p", "kind": "length-bound", "field": "name", "min": 6},
    {"name": "p", "kind": "output-references-input-field", "output_field": "name", "input_field": "sender"},
    {"name": "p", "kind": "cross-field-comparison", "target": "input+output",
     "left": "output.name", "op": "==", "right": "input.sender"},
])
def test_predicate_vocabulary(spec):
    assert _predicate(spec, GOOD) is None
    assert _predicate(spec, BAD)


def test_numeric_range_predicate():
    data = doc(COIN)
    data["contracts"][0]["postconditions"] = [
        {"name": "band", "kind": "numeric-range", "field": "answer", "min": 40, "max": 45}]
    suite = suite_from_dict(data)
    pred = suite.build_contract(suite.contracts[0]).postconditions[0]
    schema = suite.schema("Answer")
    question = Instance.of(suite.schema("Question"), {"q": "?"})
    assert pred.evaluate(question, Instance.of(schema, {"answer": 42})) is None
    assert "outside [40, 45]" in pred.evaluate(question, Instance.of(schema, {"answer": 7}))


def test_absent_optional_field_fails_predicate():
    spec = {"name": "p", "kind": "field-equals", "field": "urgent", "value": True}
    assert "absent" in _predicate(spec, GOOD)


def test_precondition_must_target_input():
    data = doc()
    data["contracts"][0]["preconditions"] = [{"name": "p", "kind": "regex-match", "field": "email", "pattern": "x"}]
    with pytest.raises(SuiteError, match="must target the input"):
        suite_from_dict(data)
