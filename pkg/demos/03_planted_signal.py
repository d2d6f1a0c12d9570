"""
Learning a planted drug-risk rule
=================================

The synthetic generator gives every patient who takes the target drug a
high chance of an ADE when a risk diagnosis was recorded in the 60 days
before the intake. Here HTNNR and the flat LSTM baseline learn that rule
from scratch. This takes a couple of minutes on a laptop.
"""
import numpy as np

from htnnr import embedding, labeling, nn, synthetic, training

cfg = synthetic.GeneratorConfig(patient_count=5600, drug_take_prob=0.95, risk_code_prob=0.45,
                                p_ade_given_risk=0.95, p_ade_base=0.01, seed=0)
histories = synthetic.generate(cfg)
instances = labeling.build_cohort(histories, labeling.LabelingConfig(cfg.target_drug, {cfg.target_ade}))
print(len(instances), "instances,", f"{np.mean([i.label == 1 for i in instances]):.1%} positive")

vocab = embedding.build_vocabulary(histories)
emb = embedding.train_skipgram([i.prefix for i in instances], vocab, dim=32, window=2, epochs=1)
train_set, test_set, val_set = labeling.split_cohort(instances, seed=0)

config = training.TrainConfig(batch_size=256, lr=1e-2, max_epochs=20, patience=5)
models = {}
for kind, dims in (("htnnr", {"code_hidden": 16, "history_hidden": 32}), ("flat-lstm", {"hidden": 32})):
    model = nn.build_model(kind, vocab, emb, dims, seed=0)
    result = training.train(model, train_set, val_set, config)
    report = training.evaluate(model, test_set)
    models[kind] = model
    print(f"\n{kind}: best epoch {result.best_epoch} of {len(result.curve)}")
    print(report.table())

# where does HTNNR look? the encounter attention of a positive test patient
positive = next(i for i in test_set if i.label == 1)
trace = {}
model = models["htnnr"]
model.forward_batch([model.encode(positive.prefix)], trace=trace)
alpha = trace["encounter_alpha"][0]
risk = cfg.risk()
print("\nheaviest encounters of", positive.patient_id)
for k in np.argsort(-alpha)[:3]:
    e = positive.prefix.encounters[k]
    print(f"  {e.date}  weight {alpha[k]:.3f}  risk code present: {risk in e.codes}")
