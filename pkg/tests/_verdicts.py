"""Per-criterion verdict lines collected by the acceptance tests."""

VERDICTS: dict[int, str] = {}


def verdict(number: int, ok: bool, detail: str) -> bool:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
    VERDICTS[number] = line
    print(line)
    return ok
