#!/usr/bin/env python3
"""Generate the deterministic synthetic FHIR cohort fixtures.

Writes NDJSON files (one resource per line) for a 50-patient cohort plus a
small guideline-chunk file. Regenerating with the same seed reproduces the
fixtures byte for byte; tests and README demos point at the committed output.

Usage: python tools/gen_cohort.py [--out fixtures] [--patients 50] [--seed 20240501]
"""

from __future__ import annotations

import argparse
import json
import random
from datetime import datetime, timedelta, timezone
from pathlib import Path

CONDITIONS = [
    "Sepsis", "Pneumonia", "Atrial fibrillation", "Congestive heart failure",
    "COPD exacerbation", "Diabetes mellitus type 2", "Acute kidney injury",
    "Urinary tract infection", "Hypertension", "Gastrointestinal bleed",
]
RESOLVED_CONDITIONS = ["Viral gastroenteritis", "Ankle sprain", "Acute bronchitis"]
MEDICATIONS = [
    "Metformin 500mg", "Lisinopril 10mg", "Furosemide 40mg", "Warfarin 5mg",
    "Insulin glargine 20 units", "Amoxicillin 875mg", "Atorvastatin 20mg",
    "Apixaban 5mg", "Pantoprazole 40mg", "Albuterol inhaler",
]
STOPPED_MEDICATIONS = ["Ibuprofen 400mg", "Oxycodone 5mg"]
OBSERVATIONS = [
    "Heart rate", "Blood pressure systolic", "Body temperature",
    "Respiratory rate", "Oxygen saturation", "Serum creatinine",
    "Hemoglobin A1c", "White blood cell count",
]
PROCEDURES = [
    "Central venous catheter placement", "Mechanical ventilation",
    "Hemodialysis", "Upper endoscopy", "Transthoracic echocardiogram",
]
ENCOUNTER_TYPES = ["Emergency admission", "Inpatient admission", "ICU stay"]

GUIDELINE_CHUNKS = [
    ("g-sepsis-followup", "Sepsis survivors should receive a primary care follow-up appointment within seven days of discharge to reassess infection markers and organ function.", "surviving-sepsis"),
    ("g-hf-meds", "Heart failure discharge requires medication reconciliation covering diuretics, beta blockers and ACE inhibitors, with doses confirmed against the inpatient chart.", "acc-aha-hf"),
    ("g-dm-education", "Patients with diabetes mellitus need structured education on glucose monitoring, insulin administration and hypoglycemia warning signs before discharge.", "ada-standards"),
    ("g-copd-monitoring", "COPD patients should monitor for increased dyspnea, sputum changes and fever; worsening symptoms within 72 hours warrant urgent review.", "gold-copd"),
    ("g-afib-anticoag", "Atrial fibrillation patients on anticoagulants such as warfarin or apixaban require INR or adherence follow-up and bleeding-risk education.", "chest-afib"),
    ("g-aki-labs", "After acute kidney injury, repeat serum creatinine within one week and reconcile nephrotoxic medications including NSAIDs and diuretics.", "kdigo-aki"),
    ("g-pneumonia-edu", "Pneumonia discharge education should cover antibiotic completion, symptom monitoring for recurring fever, and a follow-up chest review when indicated.", "ats-cap"),
    ("g-gib-ppi", "Gastrointestinal bleed patients discharged on proton pump inhibitors need medication review and education on rebleeding warning signs such as melena.", "acg-gib"),
]

BASE_TIME = datetime(2023, 1, 10, 8, 0, 0, tzinfo=timezone.utc)


def _iso(ts: datetime) -> str:
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


def generate(out_dir: Path, n_patients: int, seed: int) -> None:
    rng = random.Random(seed)
    cohort_dir = out_dir / f"cohort{n_patients}"
    cohort_dir.mkdir(parents=True, exist_ok=True)

    patients_lines: list[str] = []
    clinical_lines: list[str] = []
    events_lines: list[str] = []

    for idx in range(1, n_patients + 1):
        pid = f"p{idx:03d}"
        admit = BASE_TIME + timedelta(days=idx, hours=rng.randint(0, 23))
        patients_lines.append(json.dumps({
            "resourceType": "Patient",
            "id": pid,
            "gender": rng.choice(["male", "female"]),
            "birthDate": f"{rng.randint(1938, 1992)}-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}",
        }))

        for c_idx, name in enumerate(rng.sample(CONDITIONS, rng.randint(1, 4))):
            clinical_lines.append(json.dumps({
                "resourceType": "Condition",
                "id": f"{pid}-cond-{c_idx}",
                "subject": {"reference": f"Patient/{pid}"},
                "clinicalStatus": {"coding": [{"system": "http://terminology.hl7.org/CodeSystem/condition-clinical", "code": "active"}]},
                "code": {"text": name},
                "recordedDate": _iso(admit + timedelta(hours=c_idx)),
            }))
        if rng.random() < 0.4:
            clinical_lines.append(json.dumps({
                "resourceType": "Condition",
                "id": f"{pid}-cond-resolved",
                "subject": {"reference": f"Patient/{pid}"},
                "clinicalStatus": {"coding": [{"code": "resolved"}]},
                "code": {"text": rng.choice(RESOLVED_CONDITIONS)},
                "recordedDate": _iso(admit - timedelta(days=rng.randint(30, 200))),
            }))

        for m_idx, med in enumerate(rng.sample(MEDICATIONS, rng.randint(1, 3))):
            clinical_lines.append(json.dumps({
                "resourceType": "MedicationRequest",
                "id": f"{pid}-med-{m_idx}",
                "subject": {"reference": f"Patient/{pid}"},
                "status": "active",
                "intent": "order",
                "medicationCodeableConcept": {"text": med},
                "authoredOn": _iso(admit + timedelta(hours=6 + m_idx)),
            }))
        if rng.random() < 0.3:
            clinical_lines.append(json.dumps({
                "resourceType": "MedicationRequest",
                "id": f"{pid}-med-stopped",
                "subject": {"reference": f"Patient/{pid}"},
                "status": "stopped",
                "intent": "order",
                "medicationCodeableConcept": {"text": rng.choice(STOPPED_MEDICATIONS)},
                "authoredOn": _iso(admit - timedelta(days=rng.randint(5, 60))),
            }))

        for o_idx in range(rng.randint(2, 6)):
            name = rng.choice(OBSERVATIONS)
            events_lines.append(json.dumps({
                "resourceType": "Observation",
                "id": f"{pid}-obs-{o_idx}",
                "subject": {"reference": f"Patient/{pid}"},
                "status": "final",
                "code": {"text": name},
                "effectiveDateTime": _iso(admit + timedelta(hours=rng.randint(1, 96))),
                "valueQuantity": {"value": round(rng.uniform(1, 180), 1)},
            }))

        for pr_idx in range(rng.randint(0, 2)):
            events_lines.append(json.dumps({
                "resourceType": "Procedure",
                "id": f"{pid}-proc-{pr_idx}",
                "subject": {"reference": f"Patient/{pid}"},
                "status": "completed",
                "code": {"text": rng.choice(PROCEDURES)},
                "performedDateTime": _iso(admit + timedelta(hours=rng.randint(2, 48))),
            }))

        events_lines.append(json.dumps({
            "resourceType": "Encounter",
            "id": f"{pid}-enc-0",
            "subject": {"reference": f"Patient/{pid}"},
            "status": "finished",
            "class": {"code": "IMP"},
            "type": [{"text": rng.choice(ENCOUNTER_TYPES)}],
            "period": {"start": _iso(admit), "end": _iso(admit + timedelta(days=rng.randint(2, 12)))},
        }))

    (cohort_dir / "patients.ndjson").write_text("\n".join(patients_lines) + "\n", encoding="utf-8")
    (cohort_dir / "clinical.ndjson").write_text("\n".join(clinical_lines) + "\n", encoding="utf-8")
    (cohort_dir / "events.ndjson").write_text("\n".join(events_lines) + "\n", encoding="utf-8")

    guidelines = [
        {"chunk_id": cid, "text": text, "source_label": label}
        for cid, text, label in GUIDELINE_CHUNKS
    ]
    (out_dir / "guidelines.json").write_text(
        json.dumps(guidelines, indent=2) + "\n", encoding="utf-8"
    )
    print(f"wrote {n_patients} patients under {cohort_dir}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("fixtures"))
    parser.add_argument("--patients", type=int, default=50)
    parser.add_argument("--seed", type=int, default=20240501)
    args = parser.parse_args()
    generate(args.out, args.patients, args.seed)


if __name__ == "__main__":
    main()
