#!/usr/bin/env python3
"""Download the UCI adult census dataset and write data/adult.csv.

The output is a single numeric CSV (48,842 rows) with an ``income`` 0/1
label column, categorical columns encoded by sorted-vocabulary index and
missing values ("?") left as empty cells. Run from the repository root:

    python3 scripts/fetch_adult.py

Requires network access to archive.ics.uci.edu.
"""

import csv
import os
import sys
import urllib.request

BASE = "https://archive.ics.uci.edu/ml/machine-learning-databases/adult"
COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education_num",
    "marital_status", "occupation", "relationship", "race", "sex",
    "capital_gain", "capital_loss", "hours_per_week", "native_country", "income",
]
CATEGORICAL = {
    "workclass", "education", "marital_status", "occupation",
    "relationship", "race", "sex", "native_country",
}


def fetch(name):
    url = f"{BASE}/{name}"
    print(f"downloading {url}")
    with urllib.request.urlopen(url, timeout=60) as resp:
        return resp.read().decode("utf-8", errors="replace")


def parse(text, skip_header_line):
    rows = []
    for i, line in enumerate(text.splitlines()):
        if skip_header_line and i == 0:
            continue
        line = line.strip().rstrip(".")
        if not line:
            continue
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != len(COLUMNS):
            continue
        rows.append(cells)
    return rows


def main():
    out_path = os.path.join(os.path.dirname(__file__), "..", "data", "adult.csv")
    rows = parse(fetch("adult.data"), False) + parse(fetch("adult.test"), True)
    print(f"parsed {len(rows)} rows (expected 48842)")

    vocab = {c: sorted({r[j] for r in rows if r[j] != "?"})
             for j, c in enumerate(COLUMNS) if c in CATEGORICAL}
    encoded = []
    for r in rows:
        out = []
        for j, c in enumerate(COLUMNS):
            v = r[j]
            if c == "income":
                out.append("1" if v.startswith(">50K") else "0")
            elif c in CATEGORICAL:
                out.append("" if v == "?" else str(vocab[c].index(v)))
            else:
                out.append(v)
        encoded.append(out)

    os.makedirs(os.path.dirname(out_path), exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        w.writerows(encoded)
    print(f"wrote {out_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
