"""Claims records: codes, encounters, per-patient histories, and the JSONL format.

One patient per line::

    {"patient_id":"P000001","encounters":[{"date":"2017-03-14","codes":[{"type":"GPI","code":"3320003010"}]}]}
"""
from __future__ import annotations

import datetime as dt
import enum
import io
import json
from dataclasses import dataclass
from typing import BinaryIO, Iterable


class CodeType(str, enum.Enum):
    ICD = "ICD"
    CPT = "CPT"
    POS = "POS"
    GPI = "GPI"
    TOB = "TOB"
    REVENUE = "REVENUE"
    HCPCS = "HCPCS"
    DISCHARGE = "DISCHARGE"
    LOINC = "LOINC"

    @classmethod
    def parse(cls, value: str) -> "CodeType":
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"unknown code type {value!r}") from None


@dataclass(frozen=True)
class ClaimCode:
    code_type: CodeType
    code: str

    def __post_init__(self):
        if not isinstance(self.code_type, CodeType):
            object.__setattr__(self, "code_type", CodeType.parse(self.code_type))
        if not self.code or any(ch.isspace() for ch in self.code):
            raise ValueError(f"claim code must be non-empty without whitespace: {self.code!r}")

    @property
    def token(self) -> str:
        """``TYPE:code`` form used as the vocabulary key."""
        return f"{self.code_type.value}:{self.code}"


@dataclass(frozen=True)
class Encounter:
    date: dt.date
    codes: tuple[ClaimCode, ...]

    def __post_init__(self):
        object.__setattr__(self, "codes", tuple(self.codes))
        if not self.codes:
            raise ValueError(f"encounter on {self.date} has no codes")

    def has(self, code_type: CodeType, code: str) -> bool:
        return any(c.code_type is code_type and c.code == code for c in self.codes)


@dataclass(frozen=True)
class ClaimHistory:
    patient_id: str
    encounters: tuple[Encounter, ...]

    def __post_init__(self):
        encs = tuple(self.encounters)
        if any(b.date < a.date for a, b in zip(encs, encs[1:])):
            # sorted() is stable: same-day encounters keep their given order
            encs = tuple(sorted(encs, key=lambda e: e.date))
        object.__setattr__(self, "encounters", encs)

    def __len__(self):
        return len(self.encounters)


@dataclass(frozen=True)
class CohortStats:
    patient_count: int
    unique_codes: int
    mean_encounters: float
    mean_codes_per_encounter: float


# ---------------------------------------------------------------------------
# JSON <-> objects


def encounter_to_json(enc: Encounter) -> dict:
    return {
        "date": enc.date.isoformat(),
        "codes": [{"type": c.code_type.value, "code": c.code} for c in enc.codes],
    }


def encounter_from_json(obj: dict) -> Encounter:
    codes = tuple(ClaimCode(CodeType.parse(c["type"]), c["code"]) for c in obj["codes"])
    return Encounter(dt.date.fromisoformat(obj["date"]), codes)


def history_to_json(history: ClaimHistory) -> dict:
    return {
        "patient_id": history.patient_id,
        "encounters": [encounter_to_json(e) for e in history.encounters],
    }


def history_from_json(obj: dict) -> ClaimHistory:
    return ClaimHistory(str(obj["patient_id"]), tuple(encounter_from_json(e) for e in obj["encounters"]))


def dumps_line(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def _text_lines(source):
    if isinstance(source, (io.TextIOBase,)):
        yield from source
        return
    for raw in source:
        yield raw.decode("utf-8") if isinstance(raw, bytes) else raw


def iter_jsonl(source) -> Iterable[tuple[int, dict]]:
    """Yield ``(line_number, object)`` for every non-blank line."""
    for lineno, line in enumerate(_text_lines(source), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"line {lineno}: malformed JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ValueError(f"line {lineno}: expected a JSON object")
        yield lineno, obj


def parse_cohort(source: BinaryIO) -> list[ClaimHistory]:
    """Read a claims JSONL stream.

    Raises ``ValueError`` carrying the offending line number for malformed
    records, unknown code types, duplicate patient ids, or empty encounters.
    """
    histories = []
    seen = set()
    for lineno, obj in iter_jsonl(source):
        try:
            history = history_from_json(obj)
        except (KeyError, TypeError, ValueError) as exc:
            msg = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
            raise ValueError(f"line {lineno}: {msg}") from None
        if history.patient_id in seen:
            raise ValueError(f"line {lineno}: duplicate patient_id {history.patient_id!r}")
        seen.add(history.patient_id)
        histories.append(history)
    return histories


def write_cohort(histories: Iterable[ClaimHistory], sink: BinaryIO) -> None:
    for h in histories:
        sink.write((dumps_line(history_to_json(h)) + "\n").encode("utf-8"))


def read_cohort_file(path) -> list[ClaimHistory]:
    with open(path, "rb") as fh:
        return parse_cohort(fh)


def write_cohort_file(histories, path) -> None:
    with open(path, "wb") as fh:
        write_cohort(histories, fh)


def cohort_stats(histories: list[ClaimHistory]) -> CohortStats:
    if not histories:
        return CohortStats(0, 0, 0.0, 0.0)
    n_enc = sum(len(h.encounters) for h in histories)
    n_codes = sum(len(e.codes) for h in histories for e in h.encounters)
    unique = {(c.code_type, c.code) for h in histories for e in h.encounters for c in e.codes}
    return CohortStats(
        patient_count=len(histories),
        unique_codes=len(unique),
        mean_encounters=n_enc / len(histories),
        mean_codes_per_encounter=n_codes / n_enc if n_enc else 0.0,
    )
