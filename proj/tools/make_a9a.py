#!/usr/bin/env python3
# Copyright (c) 2026 The DVFL Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Rebuilds the a9a binary encoding of the UCI Adult census data.

Produces LIBSVM files with the 123-column layout of a9a: continuous
attributes are quantized into train-set quantile bins (capital gain/loss
into zero / non-zero), categorical attributes are one-hot encoded in the
order listed in adult.names. Rows with a missing value simply leave that
attribute's block empty.

Usage: make_a9a.py adult.data adult.test out_dir
"""

import sys
from pathlib import Path

CATEGORIES = {
    "workclass": "Private, Self-emp-not-inc, Self-emp-inc, Federal-gov, Local-gov, State-gov, Without-pay, Never-worked",
    "education": "Bachelors, Some-college, 11th, HS-grad, Prof-school, Assoc-acdm, Assoc-voc, 9th, 7th-8th, 12th, Masters, 1st-4th, 10th, Doctorate, 5th-6th, Preschool",
    "marital-status": "Married-civ-spouse, Divorced, Never-married, Separated, Widowed, Married-spouse-absent, Married-AF-spouse",
    "occupation": "Tech-support, Craft-repair, Other-service, Sales, Exec-managerial, Prof-specialty, Handlers-cleaners, Machine-op-inspct, Adm-clerical, Farming-fishing, Transport-moving, Priv-house-serv, Protective-serv, Armed-Forces",
    "relationship": "Wife, Own-child, Husband, Not-in-family, Other-relative, Unmarried",
    "race": "White, Asian-Pac-Islander, Amer-Indian-Eskimo, Other, Black",
    "sex": "Female, Male",
    "native-country": "United-States, Cambodia, England, Puerto-Rico, Canada, Germany, Outlying-US(Guam-USVI-etc), India, Japan, Greece, South, China, Cuba, Iran, Honduras, Philippines, Italy, Poland, Jamaica, Vietnam, Mexico, Portugal, Ireland, France, Dominican-Republic, Laos, Ecuador, Taiwan, Haiti, Columbia, Hungary, Guatemala, Nicaragua, Scotland, Thailand, Yugoslavia, El-Salvador, Trinadad&Tobago, Peru, Hong, Holand-Netherlands",
}

# (name, kind, width); kind "q" = quantile bins, "z" = zero / non-zero.
COLUMNS = [
    ("age", "q", 5),
    ("workclass", "c", 8),
    ("fnlwgt", "q", 5),
    ("education", "c", 16),
    ("education-num", "q", 5),
    ("marital-status", "c", 7),
    ("occupation", "c", 14),
    ("relationship", "c", 6),
    ("race", "c", 5),
    ("sex", "c", 2),
    ("capital-gain", "z", 2),
    ("capital-loss", "z", 2),
    ("hours-per-week", "q", 5),
    ("native-country", "c", 41),
]


def read_rows(path):
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("|"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 15:
            continue
        rows.append(fields)
    return rows


def quantile_edges(values, bins):
    values = sorted(values)
    edges = []
    for b in range(1, bins):
        edges.append(values[(len(values) * b) // bins])
    return edges


def encode(row, edges):
    out = []
    offset = 1
    for col, (name, kind, width) in enumerate(COLUMNS):
        raw = row[col]
        if raw != "?":
            if kind == "c":
                cats = [c.strip() for c in CATEGORIES[name].split(",")]
                out.append(offset + cats.index(raw))
            elif kind == "z":
                out.append(offset + (0 if float(raw) == 0 else 1))
            else:
                v = float(raw)
                out.append(offset + sum(1 for e in edges[name] if v >= e))
        offset += width
    label = "+1" if row[14].rstrip(".") == ">50K" else "-1"
    return label + " " + " ".join(f"{i}:1" for i in out)


def main():
    if len(sys.argv) != 4:
        sys.exit(__doc__)
    train = read_rows(sys.argv[1])
    test = read_rows(sys.argv[2])
    edges = {}
    for col, (name, kind, width) in enumerate(COLUMNS):
        if kind == "q":
            edges[name] = quantile_edges([float(r[col]) for r in train], width)
    out = Path(sys.argv[3])
    out.mkdir(parents=True, exist_ok=True)
    (out / "a9a").write_text("\n".join(encode(r, edges) for r in train) + "\n")
    (out / "a9a.t").write_text("\n".join(encode(r, edges) for r in test) + "\n")


if __name__ == "__main__":
    main()
