"""Synthetic claims cohorts with a planted drug -> ADE risk rule.

A patient who takes the target drug is *exposed* when the risk code appears
in some encounter before the intake dated no more than ``risk_window_days``
earlier. Exposed patients get an ADE encounter (target ADE + indication code)
shortly after intake with probability ``p_ade_given_risk``; everyone else
with probability ``p_ade_base``.
"""
from __future__ import annotations

import bisect
import datetime as dt
from dataclasses import dataclass

import numpy as np

from .claims import ClaimCode, ClaimHistory, CodeType, Encounter

# relative frequency of each code type among background codes
TYPE_WEIGHTS = {
    CodeType.ICD: 0.30, CodeType.CPT: 0.22, CodeType.GPI: 0.14, CodeType.REVENUE: 0.10,
    CodeType.POS: 0.07, CodeType.HCPCS: 0.06, CodeType.LOINC: 0.05, CodeType.TOB: 0.04,
    CodeType.DISCHARGE: 0.02,
}
START = dt.date(2015, 1, 1)


@dataclass(frozen=True)
class GeneratorConfig:
    patient_count: int = 1000
    vocab_size: int = 200
    topics: int = 20
    topics_per_patient: int = 3
    mean_encounters: float = 40.0
    mean_codes_per_encounter: float = 6.6
    mean_gap_days: float = 10.0
    drug_take_prob: float = 0.5
    risk_code: str = "ICD:E11.9"
    risk_code_prob: float = 0.5
    risk_companions: int = 2
    risk_window_days: int = 60
    p_ade_given_risk: float = 0.9
    p_ade_base: float = 0.05
    p_prior_ade: float = 0.0
    ade_window_days: int = 90
    target_drug: str = "3320003010"
    target_ade: str = "L29.9"
    indication_code: str = "T46.9"
    seed: int = 0

    def __post_init__(self):
        for name in ("drug_take_prob", "risk_code_prob", "p_ade_given_risk", "p_ade_base", "p_prior_ade"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if not self.p_ade_given_risk > self.p_ade_base:
            raise ValueError("p_ade_given_risk must exceed p_ade_base")
        if self.patient_count < 0 or self.vocab_size < self.topics or self.topics < 1:
            raise ValueError("need patient_count >= 0 and vocab_size >= topics >= 1")
        if not 1 <= self.topics_per_patient <= self.topics:
            raise ValueError("topics_per_patient must be in [1, topics]")
        if self.mean_encounters <= 0 or self.mean_codes_per_encounter < 1 or self.mean_gap_days < 0:
            raise ValueError("mean_encounters > 0, mean_codes_per_encounter >= 1, mean_gap_days >= 0 required")
        self.risk()  # validate format

    def risk(self) -> ClaimCode:
        type_name, sep, code = self.risk_code.partition(":")
        if not sep:
            raise ValueError(f"risk_code must look like TYPE:code, got {self.risk_code!r}")
        return ClaimCode(CodeType.parse(type_name), code)


def background_code(code_type: CodeType, k: int) -> ClaimCode:
    # the "S" prefix keeps background codes disjoint from any real code used by the rule
    return ClaimCode(code_type, f"S{code_type.value[0]}{k:05d}")


def risk_companion(k: int) -> ClaimCode:
    # procedure codes recorded together with the risk diagnosis
    return ClaimCode(CodeType.CPT, f"SR{k:04d}")


def is_exposed(history: ClaimHistory, drug_index: int, risk: ClaimCode, window_days: int) -> bool:
    drug_date = history.encounters[drug_index].date
    return any(
        risk in enc.codes and (drug_date - enc.date).days <= window_days
        for enc in history.encounters[:drug_index]
    )


class _Sampler:
    """Background codes come in topics: code ``k`` of every type belongs to topic
    ``k % topics``, and each encounter draws all its codes from one of the
    patient's topics. This gives the embedding real co-occurrence structure."""

    def __init__(self, config: GeneratorConfig):
        self.config = config
        self.types = list(TYPE_WEIGHTS)
        w = np.array([TYPE_WEIGHTS[t] for t in self.types])
        self.type_p = w / w.sum()
        self.members = [np.arange(t, config.vocab_size, config.topics) for t in range(config.topics)]
        # Zipf-like popularity within a topic
        self.member_p = []
        for m in self.members:
            z = 1.0 / np.arange(1, len(m) + 1)
            self.member_p.append(z / z.sum())

    def codes(self, rng, n, topic):
        types = rng.choice(len(self.types), size=n, p=self.type_p)
        ks = self.members[topic][rng.choice(len(self.members[topic]), size=n, p=self.member_p[topic])]
        return [background_code(self.types[t], int(k)) for t, k in zip(types, ks)]

    def patient(self, index: int) -> ClaimHistory:
        cfg = self.config
        rng = np.random.default_rng([cfg.seed, index])
        n = max(1, int(rng.poisson(cfg.mean_encounters)))
        gaps = rng.geometric(1.0 / (cfg.mean_gap_days + 1.0), size=n) - 1
        gaps[0] = rng.integers(0, 365)
        days = np.cumsum(gaps)
        sizes = 1 + rng.poisson(cfg.mean_codes_per_encounter - 1.0, size=n)
        dates = [START + dt.timedelta(days=int(d)) for d in days]
        mine = rng.choice(cfg.topics, size=cfg.topics_per_patient, replace=False)
        topics = mine[rng.integers(0, len(mine), size=n)]
        codes = [self.codes(rng, int(s), int(t)) for s, t in zip(sizes, topics)]

        takes = n >= 2 and rng.random() < cfg.drug_take_prob
        drug_at = int(rng.integers(1, n)) if takes else n
        if rng.random() < cfg.risk_code_prob:
            j = int(rng.integers(0, drug_at))
            for code in [cfg.risk()] + [risk_companion(k) for k in range(cfg.risk_companions)]:
                codes[j].insert(int(rng.integers(0, len(codes[j]) + 1)), code)
        if takes:
            drug = ClaimCode(CodeType.GPI, cfg.target_drug)
            codes[drug_at].insert(int(rng.integers(0, len(codes[drug_at]) + 1)), drug)

        encounters = [Encounter(d, tuple(c)) for d, c in zip(dates, codes)]
        ade = (ClaimCode(CodeType.ICD, cfg.target_ade), ClaimCode(CodeType.ICD, cfg.indication_code))
        if takes and rng.random() < cfg.p_prior_ade:
            j = int(rng.integers(0, drug_at))
            encounters[j] = Encounter(encounters[j].date, encounters[j].codes + ade)
        pid = f"P{index + 1:06d}"
        if takes:
            exposed = is_exposed(ClaimHistory(pid, tuple(encounters)), drug_at, cfg.risk(), cfg.risk_window_days)
            p = cfg.p_ade_given_risk if exposed else cfg.p_ade_base
            if rng.random() < p:
                when = dates[drug_at] + dt.timedelta(days=int(rng.integers(1, cfg.ade_window_days + 1)))
                extra = tuple(self.codes(rng, int(rng.integers(0, 3)), int(mine[0])))
                pos = bisect.bisect_right([e.date for e in encounters], when)
                encounters.insert(pos, Encounter(when, ade + extra))
        return ClaimHistory(pid, tuple(encounters))


def generate(config: GeneratorConfig) -> list[ClaimHistory]:
    """Generate ``config.patient_count`` histories; patient ``i`` draws from seed ``(seed, i)``."""
    sampler = _Sampler(config)
    return [sampler.patient(i) for i in range(config.patient_count)]
