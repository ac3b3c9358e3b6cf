"""Run record for the 10000-patient, seed-42 synthetic cohort.

Usage: synthetic_record.py GENERATED_DIR
where GENERATED_DIR holds the output of `zimm generate --patients 10000
--seed 42`. Writes ../fixtures/synthetic_seed42.json with FNV-1a file
checksums and the histogram of in-window relapse counts, tallied straight
from events.jsonl and the index dates in latent.jsonl.
"""
import collections
import datetime
import json
import os
import sys

WINDOW = 18 * 30


def fnv1a64(path):
    h = 0xcbf29ce484222325
    with open(path, "rb") as f:
        for byte in f.read():
            h ^= byte
            h = (h * 0x100000001b3) & 0xFFFFFFFFFFFFFFFF
    return "%016x" % h


def day(s):
    return datetime.date.fromisoformat(s)


src = sys.argv[1]
index = {}
classes = collections.Counter()
with open(os.path.join(src, "latent.jsonl")) as f:
    for line in f:
        r = json.loads(line)
        index[r["patient_id"]] = day(r["index_date"])
        classes[r["latent_class"]] += 1

counts = collections.Counter()
records = 0
with open(os.path.join(src, "events.jsonl")) as f:
    for line in f:
        records += 1
        r = json.loads(line)
        if r["kind"] != "relapse_drug":
            continue
        d = (day(r["start"]) - index[r["patient_id"]]).days
        if 1 <= d <= WINDOW:
            counts[r["patient_id"]] += 1

hist = collections.Counter(counts[p] for p in index)
top = max(hist)
out = {
    "patients": len(index),
    "seed": 42,
    "records": records,
    "classes": dict(sorted(classes.items())),
    "checksums": {name: fnv1a64(os.path.join(src, name))
                  for name in ("events.jsonl", "patients.jsonl", "latent.jsonl")},
    "n_histogram": [hist.get(n, 0) for n in range(top + 1)],
}
dst = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "fixtures", "synthetic_seed42.json")
with open(dst, "w") as f:
    json.dump(out, f, indent=1, sort_keys=True)
    f.write("\n")
