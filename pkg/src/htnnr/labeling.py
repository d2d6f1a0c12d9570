"""ADE identification and per-drug instance construction.

An encounter records an ADE when a target-ADE diagnosis code and an
indication code (any category) appear in it together. A patient who takes
the target drug yields one instance: the encounters before the first intake,
labelled +1 if an ADE is recorded within ``window_days`` of that intake.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .claims import ClaimHistory, CodeType, dumps_line, encounter_from_json, encounter_to_json, iter_jsonl

CATEGORIES = ("A1", "A2", "B1", "B2")


@dataclass(frozen=True)
class IndicationCodeSet:
    A1: frozenset
    A2: frozenset
    B1: frozenset
    B2: frozenset

    @property
    def all_codes(self) -> frozenset:
        return self.A1 | self.A2 | self.B1 | self.B2

    @classmethod
    def from_mapping(cls, mapping: dict) -> "IndicationCodeSet":
        missing = [k for k in CATEGORIES if k not in mapping]
        if missing:
            raise ValueError(f"indication set is missing categories {missing}")
        return cls(**{k: frozenset(mapping[k]) for k in CATEGORIES})

    @classmethod
    def load(cls, path) -> "IndicationCodeSet":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"indication-set file not found: {path}")
        return cls.from_mapping(json.loads(path.read_text()))

    @classmethod
    def default(cls) -> "IndicationCodeSet":
        text = resources.files("htnnr").joinpath("data", "indication_codes.json").read_text()
        return cls.from_mapping(json.loads(text))


@dataclass(frozen=True)
class LabelingConfig:
    target_drug: str
    target_ades: frozenset
    indication_set: IndicationCodeSet = field(default_factory=IndicationCodeSet.default)
    window_days: int = 90

    def __post_init__(self):
        object.__setattr__(self, "target_ades", frozenset(self.target_ades))
        if self.window_days < 1:
            raise ValueError(f"window_days must be >= 1, got {self.window_days}")


@dataclass(frozen=True)
class LabeledInstance:
    patient_id: str
    cut_index: int
    prefix: ClaimHistory
    label: int


def detect_ade_events(history: ClaimHistory, config: LabelingConfig) -> list[tuple[int, str]]:
    """Return ``(encounter index, ADE code)`` for every ADE-recording encounter.

    An encounter is reported once, with its first target-ADE code.
    """
    indications = config.indication_set.all_codes
    events = []
    for i, enc in enumerate(history.encounters):
        icd = [c.code for c in enc.codes if c.code_type is CodeType.ICD]
        ade = next((c for c in icd if c in config.target_ades), None)
        if ade is not None and any(c in indications for c in icd):
            events.append((i, ade))
    return events


def first_drug_index(history: ClaimHistory, drug: str):
    for i, enc in enumerate(history.encounters):
        if enc.has(CodeType.GPI, drug):
            return i
    return None


def label_patient(history: ClaimHistory, config: LabelingConfig):
    """Build the labelled instance for one patient, or ``None`` if ineligible.

    Ineligible: never takes the drug, takes it at the first encounter, or has
    an ADE recorded at or before the first intake.
    """
    m = first_drug_index(history, config.target_drug)
    if m is None or m == 0:
        return None
    events = detect_ade_events(history, config)
    if any(i <= m for i, _ in events):
        return None
    start = history.encounters[m].date
    label = -1
    for i, _ in events:
        if (history.encounters[i].date - start).days <= config.window_days:
            label = 1
            break
    prefix = ClaimHistory(history.patient_id, history.encounters[:m])
    return LabeledInstance(history.patient_id, m, prefix, label)


def build_cohort(histories, config: LabelingConfig) -> list[LabeledInstance]:
    out = []
    for h in histories:
        inst = label_patient(h, config)
        if inst is not None:
            out.append(inst)
    return out


def split_sizes(n: int) -> tuple[int, int, int]:
    n_train = int(np.floor(0.7 * n + 1e-9))
    n_test = int(np.floor(0.2 * n + 1e-9))
    return n_train, n_test, n - n_train - n_test


def split_cohort(instances, seed: int):
    """Shuffle by ``seed`` and cut 0.7/0.2/0.1 into (train, test, validation)."""
    n = len(instances)
    if n < 10:
        raise ValueError(f"need at least 10 instances to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train, n_test, _ = split_sizes(n)
    shuffled = [instances[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:n_train + n_test], shuffled[n_train + n_test:]


# ---------------------------------------------------------------------------
# instance JSONL


def instance_to_json(inst: LabeledInstance) -> dict:
    return {
        "patient_id": inst.patient_id,
        "cut_index": inst.cut_index,
        "label": inst.label,
        "prefix": [encounter_to_json(e) for e in inst.prefix.encounters],
    }


def write_instances(instances, sink) -> None:
    for inst in instances:
        sink.write((dumps_line(instance_to_json(inst)) + "\n").encode("utf-8"))


def parse_instances(source) -> list[LabeledInstance]:
    out = []
    for lineno, obj in iter_jsonl(source):
        try:
            prefix = ClaimHistory(str(obj["patient_id"]), tuple(encounter_from_json(e) for e in obj["prefix"]))
            label = int(obj["label"])
            if label not in (1, -1):
                raise ValueError(f"label must be +1 or -1, got {label}")
            out.append(LabeledInstance(prefix.patient_id, int(obj["cut_index"]), prefix, label))
        except (KeyError, TypeError, ValueError) as exc:
            msg = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
            raise ValueError(f"line {lineno}: {msg}") from None
    return out
