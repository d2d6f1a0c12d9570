import io
import time

import numpy as np
import pytest

from htnnr import claims, embedding, labeling, synthetic
from htnnr.synthetic import GeneratorConfig

from oracles import label_scan


def cohort_bytes(cfg):
    buf = io.BytesIO()
    claims.write_cohort(synthetic.generate(cfg), buf)
    return buf.getvalue()


def label_all(histories, cfg):
    return labeling.build_cohort(histories, labeling.LabelingConfig(cfg.target_drug, {cfg.target_ade}))


class TestConfig:
    @pytest.mark.parametrize("field, value", [("drug_take_prob", 1.5), ("p_ade_base", -0.1), ("vocab_size", 5),
                                              ("topics_per_patient", 0), ("risk_code", "E11.9")])
    def test_invalid(self, field, value):
        with pytest.raises(ValueError):
            GeneratorConfig(**{field: value})

    def test_probabilities_ordered(self):
        with pytest.raises(ValueError, match="must exceed"):
            GeneratorConfig(p_ade_given_risk=0.1, p_ade_base=0.2)


class TestGenerate:
    def test_empty(self):
        assert synthetic.generate(GeneratorConfig(patient_count=0)) == []

    def test_deterministic(self):
        cfg = GeneratorConfig(patient_count=50, seed=9)
        assert cohort_bytes(cfg) == cohort_bytes(cfg)
        assert cohort_bytes(cfg) != cohort_bytes(GeneratorConfig(patient_count=50, seed=10))

    def test_patients_independent_of_count(self):
        small = synthetic.generate(GeneratorConfig(patient_count=5))
        large = synthetic.generate(GeneratorConfig(patient_count=20))
        assert small == large[:5]

    def test_encounter_dates_nondecreasing(self):
        for h in synthetic.generate(GeneratorConfig(patient_count=100)):
            dates = [e.date for e in h.encounters]
            assert dates == sorted(dates)

    def test_forced_risk_all_positive(self):
        cfg = GeneratorConfig(patient_count=300, drug_take_prob=1.0, risk_code_prob=1.0, risk_window_days=100_000,
                              p_ade_given_risk=1.0, p_ade_base=0.0, seed=3)
        hs = synthetic.generate(cfg)
        inst = label_all(hs, cfg)
        assert len(inst) > 250
        assert all(i.label == 1 for i in inst)
        indications = labeling.IndicationCodeSet.default().all_codes
        for h in hs:
            want = label_scan(h, cfg.target_drug, {cfg.target_ade}, indications, 90)
            assert want is None or want["label"] == 1

    def test_prior_ades_are_excluded(self):
        cfg = GeneratorConfig(patient_count=200, drug_take_prob=1.0, p_prior_ade=1.0)
        assert label_all(synthetic.generate(cfg), cfg) == []

    def test_positive_rate_matches_mixture(self):
        cfg = GeneratorConfig(patient_count=10_000, drug_take_prob=0.5, seed=1)
        start = time.time()
        hs = synthetic.generate(cfg)
        elapsed = time.time() - start
        by_id = {h.patient_id: h for h in hs}
        inst = label_all(hs, cfg)
        exposed = np.array([synthetic.is_exposed(by_id[i.patient_id], i.cut_index, cfg.risk(), cfg.risk_window_days)
                            for i in inst])
        q = exposed.mean()
        expected = q * cfg.p_ade_given_risk + (1 - q) * cfg.p_ade_base
        observed = np.mean([i.label == 1 for i in inst])
        print(f"instances {len(inst)} q {q:.4f} expected {expected:.4f} observed {observed:.4f} gen {elapsed:.1f}s")
        assert abs(observed - expected) <= 0.03
        assert elapsed < 30.0

    def test_vocabulary_counts_emitted_codes(self):
        hs = synthetic.generate(GeneratorConfig(patient_count=200, seed=5))
        distinct = {(c.code_type, c.code) for h in hs for e in h.encounters for c in e.codes}
        assert len(embedding.build_vocabulary(hs)) == len(distinct) + 1

    def test_stats_near_targets(self):
        cfg = GeneratorConfig(patient_count=500, drug_take_prob=0.0, risk_code_prob=0.0)
        s = claims.cohort_stats(synthetic.generate(cfg))
        assert abs(s.mean_encounters - cfg.mean_encounters) < 1.5
        assert abs(s.mean_codes_per_encounter - cfg.mean_codes_per_encounter) < 0.2
