"""
Turning a claim history into a labelled instance
================================================

A patient is eligible for a drug when they take it after at least one
earlier encounter. The encounters before the first intake become the model
input; the label says whether an ADE shows up within 90 days afterwards.
"""
import datetime as dt

from htnnr import labeling
from htnnr.claims import ClaimCode, ClaimHistory, CodeType, Encounter

DRUG = "3320003010"
day0 = dt.date(2021, 3, 1)


def visit(days, *codes):
    return Encounter(day0 + dt.timedelta(days=days), tuple(ClaimCode(CodeType(t), c) for t, c in codes))


# four visits, the drug at the fourth, and a pruritus diagnosis recorded
# together with a drug-poisoning code 45 days later
patient = ClaimHistory("P1", (
    visit(-300, ("ICD", "E11.9"), ("CPT", "99213")),
    visit(-120, ("ICD", "I10"), ("LOINC", "4548-4")),
    visit(-30, ("ICD", "E11.9"), ("POS", "11")),
    visit(0, ("GPI", DRUG), ("CPT", "99214")),
    visit(45, ("ICD", "L29.9"), ("ICD", "T46.9")),
))

config = labeling.LabelingConfig(DRUG, {"L29.9"})
print("ADE encounters:", labeling.detect_ade_events(patient, config))

inst = labeling.label_patient(patient, config)
print("cut index", inst.cut_index, "label", inst.label)
print("model sees", len(inst.prefix.encounters), "encounters, last on", inst.prefix.encounters[-1].date)

# move the ADE to day 91 and the same patient becomes a negative
late = ClaimHistory("P1", patient.encounters[:-1] + (visit(91, ("ICD", "L29.9"), ("ICD", "T46.9")),))
print("ADE on day 91 -> label", labeling.label_patient(late, config).label)

# an ADE recorded before the intake removes the patient altogether
prior = ClaimHistory("P1", patient.encounters[:2] + (visit(-60, ("ICD", "L29.9"), ("ICD", "T46.9")),)
                     + patient.encounters[2:])
print("prior ADE ->", labeling.label_patient(prior, config))
