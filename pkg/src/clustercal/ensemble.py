"""Clustered calibration: one calibrator per embedding cluster.

Training fits the base method independently on each cluster's held-out
scores, with a constant for label-homogeneous clusters and a global
fallback for clusters too small to fit. Inference assigns clusters by
embedding and applies the resolved per-cluster calibrator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .calibrators import (
    Calibrator, FitData, PARAMETRIC_METHODS, fit, nll_of_probs, _constant, _laplace_rate,
)
from .metrics import ece
from .representation import ClusterModel, EmbeddingMatrix, assign
from .scores import ScoreSet

__all__ = ["ClusteredCalibrator", "train_clustered", "improved_sample_fraction"]

DEFAULT_MIN_FIT_SIZE = 30


@dataclass
class ClusteredCalibrator:
    """Per-cluster calibrator ensemble with a shared global fallback."""

    cluster_model: ClusterModel
    method: str
    calibrators: dict[int, Calibrator]
    fallback: Calibrator
    min_fit_size: int
    cluster_meta: dict[int, dict] = field(default_factory=dict)

    def resolve(self, cluster_id: int) -> Calibrator:
        return self.calibrators.get(int(cluster_id), self.fallback)

    def infer(self, scores: ScoreSet, E: EmbeddingMatrix | np.ndarray):
        """Calibrated probabilities plus the cluster labels used."""
        labels = assign(self.cluster_model, E)
        out = np.empty(len(scores))
        for c in np.unique(labels):
            mask = labels == c
            out[mask] = self.resolve(c).apply(scores.take(mask))
        return out, labels

    # serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "cluster_model": self.cluster_model.to_dict(),
            "method": self.method,
            "calibrators": {str(c): cal.to_dict() for c, cal in self.calibrators.items()},
            "fallback": self.fallback.to_dict(),
            "min_fit_size": self.min_fit_size,
            "cluster_meta": {str(c): m for c, m in self.cluster_meta.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusteredCalibrator":
        return cls(
            ClusterModel.from_dict(d["cluster_model"]),
            d["method"],
            {int(c): Calibrator.from_dict(v) for c, v in d["calibrators"].items()},
            Calibrator.from_dict(d["fallback"]),
            int(d["min_fit_size"]),
            {int(c): m for c, m in d.get("cluster_meta", {}).items()},
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "ClusteredCalibrator":
        return cls.from_dict(json.loads(s))


def _warm_start_opts(method: str, fallback: Calibrator) -> dict:
    if method == "platt":
        return {"init": (fallback.params["A"], fallback.params["B"])}
    return {}


def train_clustered(scores: ScoreSet, E: EmbeddingMatrix, cm: ClusterModel,
                    method: str, y, opts: dict | None = None) -> ClusteredCalibrator:
    """Fit the per-cluster calibration ensemble on the calibration split.

    Homogeneous clusters get a constant (Laplace-smoothed by default, raw
    rate behind ``raw_constant``); clusters below ``min_fit_size`` use the
    global fallback. Every per-cluster fit is compared against the global
    calibrator's parameters on that cluster and the lower-NLL fit is kept,
    so the ensemble can never do worse than the unified calibrator on the
    data it was fitted on.
    """
    opts = opts or {}
    if method not in PARAMETRIC_METHODS:
        raise ValueError(
            f"clustered calibration requires a parametric base method, got {method!r}")
    y = np.asarray(y)
    if len(scores) == 0 or len(y) != len(scores):
        raise ValueError("scores and labels must be aligned and non-empty")
    min_fit_size = int(opts.get("min_fit_size", DEFAULT_MIN_FIT_SIZE))
    raw_constant = bool(opts.get("raw_constant", False))

    labels = assign(cm, E)
    data_all = FitData.from_scores(scores, y)
    fallback = fit(method, data_all, opts.get("fit_opts"))

    calibrators: dict[int, Calibrator] = {}
    meta: dict[int, dict] = {}
    for c in range(cm.k):
        mask = labels == c
        n_c = int(mask.sum())
        info = {"size": n_c, "positive_rate": float(y[mask].mean()) if n_c else 0.0,
                "used_fallback": False, "used_constant": False}
        if n_c == 0:
            info["used_fallback"] = True
            calibrators[c] = fallback
        elif (y[mask] == y[mask][0]).all():
            rate = float(y[mask].mean()) if raw_constant else _laplace_rate(y[mask])
            calibrators[c] = _constant(rate, note="homogeneous")
            info["used_constant"] = True
        elif n_c < min_fit_size:
            info["used_fallback"] = True
            calibrators[c] = fallback
        else:
            sub = FitData(data_all.margins[mask], data_all.probabilities[mask], y[mask])
            cal = fit(method, sub, {**(opts.get("fit_opts") or {}),
                                    **_warm_start_opts(method, fallback)})
            if fallback.nll(sub) < cal.nll(sub):
                cal = Calibrator(fallback.method, dict(fallback.params),
                                 dict(fallback.diagnostics, refit="kept_global"))
            calibrators[c] = cal
        meta[c] = info
    return ClusteredCalibrator(cm, method, calibrators, fallback, min_fit_size, meta)


def improved_sample_fraction(model: ClusteredCalibrator, unified: Calibrator,
                             scores: ScoreSet, E: EmbeddingMatrix, y,
                             n_bins: int = 10) -> float:
    """Fraction of samples in clusters whose within-cluster calibration error
    is strictly lower under the clustered ensemble than under the unified
    calibrator."""
    y = np.asarray(y)
    p_cluster, labels = model.infer(scores, E)
    p_unified = unified.apply(scores)
    improved = 0
    for c in np.unique(labels):
        mask = labels == c
        m = min(n_bins, int(mask.sum()))
        e_ccl, _ = ece(p_cluster[mask], y[mask], m)
        e_uni, _ = ece(p_unified[mask], y[mask], m)
        if e_ccl < e_uni:
            improved += int(mask.sum())
    return improved / len(y)
