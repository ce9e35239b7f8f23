"""Model score containers and external score ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = ["ScoreSet", "load_external_scores", "sigmoid", "logit"]

PROB_CLIP_EPS = 1e-6


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class ScoreSet:
    """Per-sample margins (logits) and probabilities in (0, 1)."""

    margins: np.ndarray | None
    probabilities: np.ndarray
    source: str = "builtin"  # builtin | external

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        object.__setattr__(self, "probabilities", p)
        if self.margins is not None:
            object.__setattr__(self, "margins", np.asarray(self.margins, dtype=np.float64))
            if self.margins.shape != p.shape:
                raise ValueError("margins/probabilities length mismatch")
        if ((p <= 0) | (p >= 1)).any():
            raise ValueError("probabilities must lie strictly in (0, 1)")

    def __len__(self) -> int:
        return len(self.probabilities)

    @classmethod
    def from_margins(cls, margins, source: str = "builtin") -> "ScoreSet":
        return cls(np.asarray(margins, dtype=np.float64), sigmoid(margins), source)

    @classmethod
    def from_probabilities(cls, probabilities, clip_eps: float = PROB_CLIP_EPS,
                           source: str = "external") -> "ScoreSet":
        p = np.clip(np.asarray(probabilities, dtype=np.float64), clip_eps, 1 - clip_eps)
        return cls(logit(p), p, source)

    def take(self, idx) -> "ScoreSet":
        m = None if self.margins is None else self.margins[idx]
        return ScoreSet(m, self.probabilities[idx], self.source)


def load_external_scores(path, clip_eps: float = PROB_CLIP_EPS,
                         expected_ids=None) -> ScoreSet:
    """Read a score CSV with columns sample_id and margin and/or probability.

    When only probabilities are present, margins are recovered via the clipped
    logit. ``expected_ids`` cross-checks row identity and order.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty file")
        cols = set(reader.fieldnames)
        if "margin" not in cols and "probability" not in cols:
            raise ValueError(f"{path}: need a margin or probability column")
        ids, margins, probs = [], [], []
        for row in reader:
            ids.append(row.get("sample_id", str(len(ids))))
            if "margin" in cols and row["margin"] != "":
                margins.append(float(row["margin"]))
            if "probability" in cols and row["probability"] != "":
                probs.append(float(row["probability"]))
    if expected_ids is not None:
        if list(expected_ids) != ids:
            raise ValueError(f"{path}: sample ids do not match the dataset")
    if margins and probs and len(margins) != len(probs):
        raise ValueError(f"{path}: ragged margin/probability columns")
    if margins:
        m = np.asarray(margins)
        if probs:
            return ScoreSet(m, np.clip(np.asarray(probs), clip_eps, 1 - clip_eps), "external")
        return ScoreSet(m, sigmoid(m), "external")
    p = np.asarray(probs)
    if ((p < 0) | (p > 1)).any():
        raise ValueError(f"{path}: probabilities outside [0, 1]")
    return ScoreSet.from_probabilities(p, clip_eps)
