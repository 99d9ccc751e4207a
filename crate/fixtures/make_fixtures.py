"""Regenerates the bundled fixtures: documents.jsonl, qrels.txt, stub.jsonl.

Run from the repository root: python3 fixtures/make_fixtures.py
"""
import hashlib
import json
import random
from pathlib import Path

HERE = Path(__file__).parent
rng = random.Random(7)

CONDITIONS = [
    "asthma", "melanoma", "sepsis", "migraine", "psoriasis", "glaucoma", "anemia", "gout",
    "lupus", "epilepsy", "cirrhosis", "leukemia", "tinnitus", "scoliosis", "rosacea", "vertigo",
    "hepatitis", "insomnia", "bronchitis", "pancreatitis", "endometriosis", "sarcoidosis",
    "osteoporosis", "neuropathy", "myocarditis", "dermatitis", "colitis", "nephritis",
    "tendinitis", "cataract",
]
MODIFIERS = [
    "pediatric", "adult", "elderly", "chronic", "acute", "refractory", "recurrent", "severe",
    "mild", "early", "advanced", "postoperative",
]
INTERVENTIONS = [
    "inhaler", "vaccine", "infusion", "implant", "antibody", "laser", "diet", "exercise",
    "acupuncture", "stent", "patch", "supplement", "probiotic", "ultrasound", "bandage",
]
FILLER = (
    "the study team will record outcomes at regular visits and report adverse events "
    "participants provide written consent before enrollment and may withdraw at any time "
    "data are stored securely and reviewed by an independent monitoring board"
).split()


def words(pool, n):
    return [rng.choice(pool) for _ in range(n)]


def text(marker, core, filler_len):
    body = core + words(FILLER, filler_len)
    rng.shuffle(body)
    return f"[{marker}] " + " ".join(body) + "."


def main():
    docs, qrels = [], []
    for qi, condition in enumerate(CONDITIONS, start=1):
        modifier = MODIFIERS[qi % len(MODIFIERS)]
        intervention = INTERVENTIONS[qi % len(INTERVENTIONS)]
        qid = f"q{qi:02d}"
        query_core = [condition] * 3 + [modifier] * 2 + [intervention] * 2
        docs.append({"id": qid, "text": text(qid, query_core, 10)})
        for ci in range(6):
            grade = 2 - ci // 2
            did = f"{qid}-c{ci + 1}"
            if grade == 2:
                core = [condition] * 2 + [modifier, intervention]
                filler = rng.randint(4, 10)
            elif grade == 1:
                core = [condition] + words(MODIFIERS, 1) + words(INTERVENTIONS, 1)
                filler = rng.randint(8, 20)
            else:
                other = rng.choice([c for c in CONDITIONS if c != condition])
                core = [other] * 2 + words(MODIFIERS, 1) + [intervention]
                filler = rng.randint(8, 30)
            docs.append({"id": did, "text": text(did, core, filler)})
            qrels.append(f"{qid} 0 {did} {grade}")

    with open(HERE / "documents.jsonl", "w") as f:
        for d in docs:
            f.write(json.dumps(d) + "\n")
    with open(HERE / "qrels.txt", "w") as f:
        f.write("\n".join(qrels) + "\n")

    # Canned replies for q01. They reverse the judged order, so a run that
    # uses them is distinguishable from the grade-replaying fallback.
    by_id = {d["id"]: d["text"] for d in docs}
    single = (HERE.parent / "crates/core/templates/single.txt").read_text()
    pairwise = (HERE.parent / "crates/core/templates/pairwise.txt").read_text()
    block = single[single.index("{{#instructions}}"):single.index("{{/instructions}}\n") + len("{{/instructions}}\n")]
    single = single.replace(block, "")
    pairwise = pairwise.replace(block, "")
    query = by_id["q01"]
    cands = [f"q01-c{i}" for i in range(1, 7)]
    value = {c: 1 - 2 * (2 - i // 2) / 2 for i, c in enumerate(cands)}  # c1,c2 -> -1 ... c5,c6 -> 1
    lines = []
    for c in cands:
        prompt = single.replace("{{query}}", query).replace("{{candidate}}", by_id[c])
        reply = json.dumps({"score": value[c], "explanation": "canned reply"})
        lines.append({"prompt_sha256": hashlib.sha256(prompt.encode()).hexdigest(), "response": reply})
    for a in cands:
        for b in cands:
            if a == b:
                continue
            prompt = (
                pairwise.replace("{{query}}", query)
                .replace("{{candidate_a}}", by_id[a])
                .replace("{{candidate_b}}", by_id[b])
            )
            diff = value[a] - value[b]
            verdict = (diff > 0) - (diff < 0)
            reply = json.dumps({"verdict": verdict, "explanation": "canned reply"})
            lines.append({"prompt_sha256": hashlib.sha256(prompt.encode()).hexdigest(), "response": reply})
    with open(HERE / "stub.jsonl", "w") as f:
        for line in lines:
            f.write(json.dumps(line) + "\n")


if __name__ == "__main__":
    main()
