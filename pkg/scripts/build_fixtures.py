"""Regenerate the bundled fixtures under src/contextual/data/.

Run from the repository root:  python3 scripts/build_fixtures.py
Output is deterministic; re-running produces byte-identical files.
"""

import json
import random
from pathlib import Path

import numpy as np

from contextual.attention import save_binary, validate
from contextual.corpus import ClinicalNote, flatten_note, tokenize, write_corpus
from contextual.kg import build_graph, lexicon_extract, save_graph, write_annotations

DATA = Path(__file__).resolve().parents[1] / "src" / "contextual" / "data"

LEXICON = {
    "fever": "problem",
    "altered mental status": "problem",
    "ruptured avm": "problem",
    "intracranial abscess": "problem",
    "urinary tract infection": "problem",
    "klebsiella": "problem",
    "prostatitis": "problem",
    "thrombocytosis": "problem",
    "pneumonia": "problem",
    "sepsis": "problem",
    "atrial fibrillation": "problem",
    "heart failure": "problem",
    "copd exacerbation": "problem",
    "acute kidney injury": "problem",
    "diabetic ketoacidosis": "problem",
    "cellulitis": "problem",
    "gastrointestinal bleed": "problem",
    "chest pain": "problem",
    "hypotension": "problem",
    "delirium": "problem",
    "ct scan": "test",
    "pet scan": "test",
    "crp": "test",
    "blood culture": "test",
    "chest x-ray": "test",
    "echocardiogram": "test",
    "urinalysis": "test",
    "lactate": "test",
    "troponin": "test",
    "ecg": "test",
    "endoscopy": "test",
    "craniotomy": "treatment",
    "antibiotics": "treatment",
    "broad-spectrum antibiotics": "treatment",
    "vancomycin": "treatment",
    "ceftriaxone": "treatment",
    "insulin drip": "treatment",
    "diuresis": "treatment",
    "anticoagulation": "treatment",
    "iv fluids": "treatment",
    "nebulizers": "treatment",
    "blood transfusion": "treatment",
    "steroids": "treatment",
}

TABLE5 = ClinicalNote(
    note_id="worked_example",
    patient_id="T5",
    tags={
        "SEX": "M",
        "SERVICE": "MEDICINE",
        "ALLERGIES": "ibuprofen",
        "CHIEF COMPLAINT": "Fever, altered mental status.",
    },
    text=(
        "This is a middle-aged male with a past medical history significant for ruptured AVM, "
        "status post craniotomy, and prior intracranial abscess, who is presenting today to the "
        "emergency department with fever and altered mental status. On admission, he was noted to "
        "be febrile and somewhat confused. A non-contrast CT scan of the head was performed which "
        "showed no acute intracranial abnormalities. Laboratory workup revealed elevated CRP and "
        "thrombocytosis. The patient was subsequently diagnosed with a urinary tract infection due "
        "to Klebsiella species and prostatitis. He was started on broad-spectrum antibiotics. "
        "Neurology and infectious disease teams were consulted for further management. A PET scan "
        "was obtained which was suggestive of prostatitis."
    ),
    reference_summary=(
        "Patient with ruptured AVM and intracranial abscess presented with fever and altered mental "
        "status. Imaging showed no acute intracranial changes. Labs revealed elevated CRP. Diagnosed "
        "with Klebsiella UTI and prostatitis, treated with antibiotics. Follow-up with neurology and "
        "infectious disease advised."
    ),
)

SALIENT = {
    "fever", "altered", "mental", "status", "ruptured", "avm", "craniotomy", "intracranial",
    "abscess", "febrile", "confused", "ct", "crp", "thrombocytosis", "urinary", "tract",
    "infection", "klebsiella", "prostatitis", "antibiotics", "neurology", "infectious", "disease",
    "pet", "<chief complaint>", "<service>", "medicine",
}


def worked_example_attention():
    """Two layers, two heads; every query row puts 0.6 of its mass on salient tokens."""
    seq = tokenize(flatten_note(TABLE5))
    n = len(seq)
    salient = np.array([t.lower() in SALIENT for t in seq.tokens])
    rows = np.full(n, 0.4 / n)
    rows[salient] += 0.6 / salient.sum()
    head_a = np.tile(rows, (n, 1))
    # second head: same profile mixed with a local (diagonal) component
    head_b = 0.5 * head_a + 0.5 * np.eye(n)
    layer = np.stack([head_a, head_b])
    return validate(np.stack([layer, layer]))


SEXES = ["M", "F"]
SERVICES = ["MEDICINE", "CARDIOLOGY", "SURGERY", "NEUROLOGY"]
ALLERGIES = ["No Known Allergies / Adverse Drug Reactions", "penicillin", "sulfa", "ibuprofen", "codeine"]
CASES = [
    ("pneumonia", "fever and productive cough", "chest x-ray", "ceftriaxone",
     "A chest x-ray showed a right lower lobe consolidation consistent with pneumonia."),
    ("sepsis", "fever and hypotension", "blood culture", "vancomycin",
     "Blood culture grew gram positive cocci and lactate was elevated, consistent with sepsis."),
    ("atrial fibrillation", "palpitations", "ecg", "anticoagulation",
     "An ECG demonstrated atrial fibrillation with rapid ventricular response."),
    ("heart failure", "dyspnea and leg swelling", "echocardiogram", "diuresis",
     "An echocardiogram revealed a reduced ejection fraction consistent with heart failure."),
    ("copd exacerbation", "shortness of breath", "chest x-ray", "nebulizers",
     "Chest x-ray showed hyperinflation without focal infiltrate, consistent with COPD exacerbation."),
    ("acute kidney injury", "decreased urine output", "urinalysis", "iv fluids",
     "Creatinine was elevated from baseline and urinalysis suggested prerenal acute kidney injury."),
    ("diabetic ketoacidosis", "nausea and vomiting", "lactate", "insulin drip",
     "Labs showed an anion gap acidosis with ketones, diagnostic of diabetic ketoacidosis."),
    ("cellulitis", "leg redness and pain", "blood culture", "antibiotics",
     "Exam showed spreading erythema of the left shin consistent with cellulitis."),
    ("gastrointestinal bleed", "melena", "endoscopy", "blood transfusion",
     "Endoscopy identified a bleeding duodenal ulcer as the source of gastrointestinal bleed."),
    ("chest pain", "chest pain", "troponin", "anticoagulation",
     "Serial troponin values were mildly elevated and the ECG showed no acute ST changes."),
]
FILLER = [
    "The patient was seen and examined at the bedside with family present.",
    "Vital signs were reviewed and the nursing notes were appreciated.",
    "Home medications were reconciled with the pharmacy and the primary care office.",
    "Social work was consulted to assist with discharge planning and home services.",
    "Physical therapy evaluated the patient and recommended continued mobility exercises.",
    "The patient tolerated a regular diet without difficulty during the stay.",
    "Code status was confirmed as full code after discussion with the patient.",
    "Pain was controlled with acetaminophen as needed throughout the admission.",
]


def synthetic_notes(count=20, seed=7):
    rng = random.Random(seed)
    notes = []
    for i in range(count):
        problem, complaint, test, treatment, finding = CASES[i % len(CASES)]
        second = CASES[(i * 3 + 1) % len(CASES)]
        age = rng.choice(["elderly", "middle-aged", "young"])
        sex = rng.choice(SEXES)
        person = "male" if sex == "M" else "female"
        filler = rng.sample(FILLER, 4)
        body = " ".join([
            f"This is a {age} {person} with a history of {second[0]} who presents with {complaint}.",
            filler[0],
            f"On arrival the patient was noted to have {complaint} and was admitted for further workup.",
            finding,
            filler[1],
            f"The patient was treated with {treatment} and monitored closely on telemetry.",
            filler[2],
            f"A repeat {test} was reviewed and the team discussed the plan with the patient.",
            filler[3],
            f"The patient improved and was discharged home with follow-up for {problem}.",
        ])
        notes.append(ClinicalNote(
            note_id=f"N{i + 1:03d}",
            patient_id=f"P{(i % 10) + 1:02d}",
            tags={
                "SEX": sex,
                "SERVICE": rng.choice(SERVICES),
                "ALLERGIES": rng.choice(ALLERGIES),
                "CHIEF COMPLAINT": complaint.capitalize() + ".",
            },
            text=body,
            reference_summary=(
                f"Patient with {second[0]} admitted with {complaint}, found to have {problem} "
                f"on {test}. Treated with {treatment} and discharged with follow-up."
            ),
        ))
    return notes


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    (DATA / "lexicon.json").write_text(json.dumps(LEXICON, indent=1, sort_keys=True) + "\n")
    write_corpus([TABLE5], DATA / "worked_example_note.jsonl")
    save_binary(worked_example_attention(), DATA / "worked_example_attention.attn")
    save_graph(build_graph(lexicon_extract(TABLE5, LEXICON)), DATA / "worked_example_graph.json")

    notes = synthetic_notes()
    write_corpus(notes, DATA / "fixture_notes.jsonl")
    anns = [a for note in notes for a in lexicon_extract(note, LEXICON)]
    write_annotations(anns, DATA / "fixture_annotations.jsonl")


if __name__ == "__main__":
    main()
