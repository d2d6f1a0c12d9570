import datetime as dt
import time
from dataclasses import dataclass

import numpy as np
import pytest

from htnnr import embedding, labeling, nn, synthetic, training
from htnnr.claims import ClaimCode, ClaimHistory, CodeType, Encounter

DAY0 = dt.date(2020, 1, 1)


def code(token):
    t, c = token.split(":", 1)
    return ClaimCode(CodeType(t), c)


def enc(day, *tokens):
    return Encounter(DAY0 + dt.timedelta(days=day), tuple(code(t) for t in tokens))


def history(pid, *encounters):
    return ClaimHistory(pid, tuple(encounters))


def set_params(model, value=None, rng=None, scale=1.0):
    """Overwrite every parameter with a constant or with uniform(-scale, scale) draws."""
    for p in model.params.values():
        p.data[...] = value if rng is None else rng.uniform(-scale, scale, size=p.shape)


def toy_model(kind="htnnr", dim=4, vocab_size=6, seed=0, **dims):
    tokens = [embedding.UNKNOWN] + [f"ICD:C{k}" for k in range(1, vocab_size)]
    vocab = embedding.Vocabulary(tokens)
    vectors = np.random.default_rng(seed).normal(size=(vocab_size, dim))
    defaults = {"htnnr": {"code_hidden": 3, "history_hidden": 4}, "flat-lstm": {"hidden": 3}}[kind]
    defaults.update(dims)
    return nn.build_model(kind, vocab, embedding.EmbeddingMatrix(vectors), defaults, seed=seed)


def random_encoded(rng, vocab_size, max_enc=5, max_codes=4, max_gap=40):
    n = int(rng.integers(1, max_enc + 1))
    codes = tuple(rng.integers(0, vocab_size, size=int(rng.integers(1, max_codes + 1))) for _ in range(n))
    deltas = np.concatenate([[nn.DELTA_MIN], rng.integers(0, max_gap, size=n - 1).astype(float)])
    return nn.EncodedHistory(codes, np.maximum(deltas, nn.DELTA_MIN))


# ---------------------------------------------------------------------------
# planted-signal experiment, shared by the acceptance and unit suites

PLANTED = synthetic.GeneratorConfig(
    patient_count=5600, drug_take_prob=0.95, risk_code_prob=0.45,
    p_ade_given_risk=0.95, p_ade_base=0.01, seed=0,
)
PLANTED_INSTANCES = 5000
PLANTED_TRAIN = training.TrainConfig(batch_size=256, lr=1e-2, max_epochs=20, patience=5, seed=0)
PLANTED_DIMS = {"htnnr": {"code_hidden": 16, "history_hidden": 32}, "flat-lstm": {"hidden": 32}}


@dataclass
class PlantedRun:
    histories: list
    instances: list
    vocab: embedding.Vocabulary
    emb: embedding.EmbeddingMatrix
    split: tuple
    models: dict
    results: dict
    reports: dict
    seconds: float


@pytest.fixture(scope="session")
def planted():
    start = time.time()
    histories = synthetic.generate(PLANTED)
    cfg = labeling.LabelingConfig(PLANTED.target_drug, {PLANTED.target_ade})
    instances = labeling.build_cohort(histories, cfg)[:PLANTED_INSTANCES]
    vocab = embedding.build_vocabulary(histories)
    emb = embedding.train_skipgram([i.prefix for i in instances], vocab, dim=32, window=2, epochs=1, seed=0)
    train_set, test_set, val_set = labeling.split_cohort(instances, 0)
    models, results, reports = {}, {}, {}
    for kind, dims in PLANTED_DIMS.items():
        model = nn.build_model(kind, vocab, emb, dims, seed=0, target_drug=PLANTED.target_drug)
        results[kind] = training.train(model, train_set, val_set, PLANTED_TRAIN)
        reports[kind] = training.evaluate(model, test_set)
        models[kind] = model
    return PlantedRun(histories, instances, vocab, emb, (train_set, test_set, val_set),
                      models, results, reports, time.time() - start)


# ---------------------------------------------------------------------------
# adversarial patients for labeling checks

DRUG_A, DRUG_B = "3320003010", "2720004000"
ADES = frozenset({"L29.9", "R21"})
CODE_POOL = [
    "GPI:" + DRUG_A, "GPI:" + DRUG_B, "ICD:L29.9", "ICD:R21", "ICD:T46.9", "ICD:D59.0",
    "ICD:Z00.0", "CPT:99213", "CPT:L29.9", "GPI:T46.9", "LOINC:L29.9",
]
AFTER_DRUG_DAYS = [0, 1, 30, 89, 90, 91, 92, 150, 400]


def adversarial_patient(rng, pid):
    """A short history with day offsets clustered on the 90/91-day boundary.

    The anchor encounter at day 0 carries one of the two drugs; the other
    encounters draw codes at random from a pool that includes the same
    code strings under the wrong code type.
    """
    before = sorted(int(d) for d in rng.integers(-200, 0, size=int(rng.integers(0, 4))))
    after = sorted(int(rng.choice(AFTER_DRUG_DAYS)) for _ in range(int(rng.integers(0, 4))))
    encs = []
    for d in before + after:
        picks = [c for c in CODE_POOL if rng.random() < 0.25] or ["ICD:Z00.0"]
        if d > 0 and rng.random() < 0.5:
            picks += ["ICD:" + str(rng.choice(sorted(ADES))), "ICD:" + str(rng.choice(["T46.9", "D59.0"]))]
        encs.append(enc(d, *picks))
    anchor = ["GPI:" + str(rng.choice([DRUG_A, DRUG_B]))]
    if rng.random() < 0.5:
        anchor.append("GPI:" + (DRUG_B if anchor[0].endswith(DRUG_A) else DRUG_A))
    encs.insert(len(before), enc(0, *anchor, "CPT:99213"))
    return history(pid, *encs)


# ---------------------------------------------------------------------------
# acceptance report lines, echoed in the terminal summary

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
