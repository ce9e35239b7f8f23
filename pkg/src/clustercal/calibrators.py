"""Global calibration methods: Platt, temperature, beta/Dirichlet (2-class),
histogram binning, isotonic (PAV), bin-wise Platt and constants.

Every method exposes the same fit/apply/nll surface so the clustered
ensemble can treat them uniformly. Parametric fits minimize mean negative
log-likelihood with Newton steps (or golden section for temperature).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .scores import ScoreSet, sigmoid

__all__ = [
    "Calibrator",
    "FitData",
    "fit",
    "nll_of_probs",
    "pav",
    "PARAMETRIC_METHODS",
    "ALL_METHODS",
]

APPLY_EPS = 1e-6
GRAD_TOL = 1e-8
MAX_ITER = 1000
T_BOUNDS = (0.01, 100.0)
PARAMETRIC_METHODS = ("platt", "temperature", "beta", "dirichlet2")
ALL_METHODS = PARAMETRIC_METHODS + ("histogram", "isotonic", "platt_bin", "constant")

MARGIN_METHODS = {"platt", "temperature"}


@dataclass(frozen=True)
class FitData:
    """Aligned margins, probabilities and binary labels for calibrator fits."""

    margins: np.ndarray
    probabilities: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.margins, dtype=np.float64)
        p = np.asarray(self.probabilities, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if not (m.shape == p.shape == y.shape) or m.ndim != 1 or len(m) < 1:
            raise ValueError("margins, probabilities, labels must be equal-length, non-empty")
        object.__setattr__(self, "margins", m)
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "labels", y)

    @classmethod
    def from_scores(cls, scores: ScoreSet, y) -> "FitData":
        if scores.margins is None:
            raise ValueError("score set has no margins")
        return cls(scores.margins, scores.probabilities, y)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class Calibrator:
    method: str
    params: dict
    diagnostics: dict = field(default_factory=dict)

    @property
    def monotone(self) -> bool:
        """True when apply is strictly increasing in its input."""
        m, q = self.method, self.params
        if m == "platt":
            return q["A"] < 0
        if m == "temperature":
            return True
        if m == "dirichlet2":
            return q["w1"] > 0 and q["w2"] < 0
        if m == "beta":
            return q["a"] > 0 and q["b"] > 0
        if m == "isotonic":
            v = np.asarray(q["values"])
            return bool(len(v) > 1 and (np.diff(v) > 0).all())
        if m == "histogram":
            v = np.asarray(q["outputs"])
            return bool(len(v) > 1 and (np.diff(v) > 0).all())
        return False

    def apply(self, scores: ScoreSet) -> np.ndarray:
        if self.method in MARGIN_METHODS or self.method == "platt_bin":
            if scores.margins is None:
                raise ValueError(f"{self.method} calibration requires margins")
        raw = self._transform(scores)
        return np.clip(raw, APPLY_EPS, 1 - APPLY_EPS)

    def _transform(self, scores: ScoreSet) -> np.ndarray:
        q = self.params
        if self.method == "platt":
            return 1.0 / (1.0 + np.exp(q["A"] * scores.margins + q["B"]))
        if self.method == "temperature":
            return sigmoid(scores.margins / q["T"])
        if self.method in ("beta", "dirichlet2"):
            p = np.clip(scores.probabilities, APPLY_EPS, 1 - APPLY_EPS)
            if self.method == "beta":
                z = q["a"] * np.log(p) - q["b"] * np.log1p(-p) + q["c"]
            else:
                z = q["w1"] * np.log(p) + q["w2"] * np.log1p(-p) + q["c"]
            return sigmoid(z)
        if self.method == "histogram":
            idx = _bin_lookup(np.asarray(q["edges"]), scores.probabilities)
            return np.asarray(q["outputs"])[idx]
        if self.method == "isotonic":
            bp = np.asarray(q["breakpoints"])
            vals = np.asarray(q["values"])
            idx = np.clip(np.searchsorted(bp, scores.probabilities, side="right") - 1, 0, len(vals) - 1)
            return vals[idx]
        if self.method == "platt_bin":
            idx = _bin_lookup(np.asarray(q["edges"]), scores.probabilities)
            out = np.empty(len(scores))
            for b, sub in enumerate(q["bins"]):
                mask = idx == b
                if not mask.any():
                    continue
                cal = sub if isinstance(sub, Calibrator) else Calibrator(**_decode(sub))
                out[mask] = cal.apply(scores.take(mask))
            return out
        if self.method == "constant":
            return np.full(len(scores), q["p0"])
        raise ValueError(f"unknown calibration method {self.method!r}")

    def nll(self, data: FitData) -> float:
        p = self.apply(ScoreSet(data.margins, np.clip(data.probabilities, APPLY_EPS, 1 - APPLY_EPS)))
        return nll_of_probs(p, data.labels)

    # serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        params = {}
        for k, v in self.params.items():
            if k == "bins":
                params[k] = [c.to_dict() for c in v]
            elif isinstance(v, np.ndarray):
                params[k] = v.tolist()
            else:
                params[k] = v
        return {"method": self.method, "params": params, "diagnostics": self.diagnostics}

    @classmethod
    def from_dict(cls, d: dict) -> "Calibrator":
        return cls(**_decode(d))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "Calibrator":
        return cls.from_dict(json.loads(s))


def _decode(d: dict) -> dict:
    params = dict(d["params"])
    if "bins" in params:
        params["bins"] = [Calibrator.from_dict(b) if isinstance(b, dict) else b
                          for b in params["bins"]]
    for k in ("edges", "outputs", "breakpoints", "values"):
        if k in params:
            params[k] = np.asarray(params[k], dtype=np.float64)
    return {"method": d["method"], "params": params,
            "diagnostics": d.get("diagnostics", {})}


def nll_of_probs(p, y, eps: float = APPLY_EPS) -> float:
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1 - eps)
    y = np.asarray(y)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


# fitting ----------------------------------------------------------------

def fit(method: str, data: FitData, opts: dict | None = None) -> Calibrator:
    """Fit a calibrator of the given method on held-out scores and labels."""
    opts = opts or {}
    if method not in ALL_METHODS:
        raise ValueError(f"unknown calibration method {method!r}")
    y = data.labels
    if method == "constant":
        return _constant(opts.get("p0", _laplace_rate(y)))
    single_class = (y == y[0]).all()
    if single_class and method != "isotonic":
        # degenerate fit data: fall back to a smoothed constant
        return _constant(_laplace_rate(y), note="single_class_fallback")
    if method == "platt":
        return _fit_platt(data.margins, y, opts)
    if method == "temperature":
        return _fit_temperature(data.margins, y)
    if method in ("beta", "dirichlet2"):
        return _fit_dirichlet2(data.probabilities, y, constrained=(method == "beta"))
    if method == "histogram":
        return _fit_histogram(data.probabilities, y,
                              opts.get("n_bins", 10), opts.get("laplace", True))
    if method == "isotonic":
        return _fit_isotonic(data.probabilities, y)
    if method == "platt_bin":
        return _fit_platt_bin(data, opts.get("n_bins", 10))
    raise AssertionError(method)


def _laplace_rate(y) -> float:
    y = np.asarray(y)
    return (int(y.sum()) + 1) / (len(y) + 2)


def _constant(p0: float, note: str | None = None) -> Calibrator:
    diag = {"note": note} if note else {}
    return Calibrator("constant", {"p0": float(p0)}, diag)


def _newton_logistic(Z, y, w0, frozen=None):
    """Minimize mean logistic NLL of sigmoid(Z @ w) over the free coords of w."""
    n = len(y)
    w = np.asarray(w0, dtype=np.float64).copy()
    free = np.ones(len(w), dtype=bool)
    if frozen is not None:
        free[list(frozen)] = False

    def objective(wv):
        return nll_of_probs(sigmoid(Z @ wv), y)

    obj = objective(w)
    it = 0
    gnorm = np.inf
    for it in range(1, MAX_ITER + 1):
        p = sigmoid(Z @ w)
        g = Z.T @ (p - y) / n
        g[~free] = 0.0
        gnorm = float(np.linalg.norm(g))
        if gnorm <= GRAD_TOL:
            break
        W = p * (1 - p)
        H = (Z.T * W) @ Z / n + 1e-12 * np.eye(len(w))
        Hf = H[np.ix_(free, free)]
        step = np.zeros_like(w)
        try:
            step[free] = np.linalg.solve(Hf, g[free])
        except np.linalg.LinAlgError:
            step[free] = g[free]
        # backtracking line search
        alpha = 1.0
        for _ in range(60):
            cand = w - alpha * step
            cand_obj = objective(cand)
            if cand_obj <= obj - 1e-4 * alpha * float(g @ step):
                break
            alpha *= 0.5
        else:
            break
        if abs(obj - cand_obj) < 1e-16 and gnorm < 1e-6:
            w, obj = cand, cand_obj
            break
        w, obj = cand, cand_obj
    return w, {"final_nll": obj, "iterations": it, "grad_norm": gnorm}


def _fit_platt(margins, y, opts) -> Calibrator:
    Z = np.column_stack([margins, np.ones_like(margins)])
    init = opts.get("init")
    w0 = np.array([1.0, 0.0]) if init is None else np.array([-init[0], -init[1]])
    w, diag = _newton_logistic(Z, y, w0)
    return Calibrator("platt", {"A": float(-w[0]), "B": float(-w[1])}, diag)


def _fit_temperature(margins, y) -> Calibrator:
    lo, hi = math.log(T_BOUNDS[0]), math.log(T_BOUNDS[1])

    def objective(log_t):
        return nll_of_probs(sigmoid(margins / math.exp(log_t)), y)

    inv_phi = (math.sqrt(5.0) - 1) / 2
    a, b = lo, hi
    c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
    fc, fd = objective(c), objective(d)
    for _ in range(220):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = objective(d)
    log_t = (a + b) / 2
    t = min(max(math.exp(log_t), T_BOUNDS[0]), T_BOUNDS[1])
    return Calibrator("temperature", {"T": float(t)},
                      {"final_nll": objective(math.log(t)), "iterations": 220})


def _fit_dirichlet2(probs, y, constrained: bool) -> Calibrator:
    p = np.clip(probs, APPLY_EPS, 1 - APPLY_EPS)
    Z = np.column_stack([np.log(p), np.log1p(-p), np.ones(len(p))])
    w0 = np.array([1.0, -1.0, 0.0])  # Platt-equivalent start
    w, diag = _newton_logistic(Z, y, w0)
    frozen = []
    if constrained:
        # beta requires a >= 0 (coef on ln p) and b >= 0 (coef on -ln(1-p))
        if w[0] < 0:
            frozen.append(0)
        if w[1] > 0:
            frozen.append(1)
        if frozen:
            w0c = w0.copy()
            w0c[frozen] = 0.0
            w, diag = _newton_logistic(Z, y, w0c, frozen=frozen)
            # the refit can push the other coefficient across its bound
            extra = [j for j, bad in ((0, w[0] < 0), (1, w[1] > 0)) if bad and j not in frozen]
            if extra:
                frozen += extra
                w0c[frozen] = 0.0
                w, diag = _newton_logistic(Z, y, w0c, frozen=frozen)
        diag = dict(diag, clamped=sorted(frozen))
        return Calibrator("beta", {"a": float(w[0]), "b": float(-w[1]), "c": float(w[2])}, diag)
    return Calibrator("dirichlet2",
                      {"w1": float(w[0]), "w2": float(w[1]), "c": float(w[2])}, diag)


def _equal_mass_edges(probs, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Bin ids (stable sort, sizes differing by <= 1) and apply-time edges."""
    order = np.argsort(probs, kind="stable")
    ids = np.empty(len(probs), dtype=np.int64)
    blocks = np.array_split(order, m)
    edges = np.zeros(m + 1)
    edges[m] = 1.0
    prev_max = None
    for i, blk in enumerate(blocks):
        ids[blk] = i
        if i > 0:
            lo = probs[blk].min() if len(blk) else prev_max
            edges[i] = (prev_max + lo) / 2 if prev_max is not None else 0.0
        prev_max = probs[blk].max() if len(blk) else prev_max
    return ids, edges


def _bin_lookup(edges, probs) -> np.ndarray:
    m = len(edges) - 1
    return np.clip(np.searchsorted(edges[1:m], probs, side="right"), 0, m - 1)


def _fit_histogram(probs, y, m: int, laplace: bool) -> Calibrator:
    m = min(m, len(probs))
    ids, edges = _equal_mass_edges(probs, m)
    outputs = np.empty(m)
    for b in range(m):
        mask = ids == b
        n_b, k_b = int(mask.sum()), int(y[mask].sum())
        outputs[b] = (k_b + 1) / (n_b + 2) if laplace else (k_b / n_b if n_b else 0.5)
    return Calibrator("histogram", {"edges": edges, "outputs": outputs},
                      {"n_bins": m, "laplace": laplace})


def pav(values, weights=None) -> np.ndarray:
    """Weighted pool-adjacent-violators: the L2 non-decreasing fit."""
    v = np.asarray(values, dtype=np.float64)
    w = np.ones_like(v) if weights is None else np.asarray(weights, dtype=np.float64)
    means, wsum, counts = [], [], []
    for vi, wi in zip(v, w):
        means.append(vi)
        wsum.append(wi)
        counts.append(1)
        while len(means) > 1 and means[-2] >= means[-1]:
            tot = wsum[-2] + wsum[-1]
            means[-2] = (means[-2] * wsum[-2] + means[-1] * wsum[-1]) / tot
            wsum[-2] = tot
            counts[-2] += counts[-1]
            means.pop()
            wsum.pop()
            counts.pop()
    return np.repeat(means, counts)


def _fit_isotonic(probs, y) -> Calibrator:
    order = np.argsort(probs, kind="stable")
    fitted = pav(np.asarray(y, dtype=np.float64)[order])
    return Calibrator("isotonic",
                      {"breakpoints": probs[order], "values": fitted},
                      {"n_blocks": int(len(np.unique(fitted)))})


def _fit_platt_bin(data: FitData, m: int) -> Calibrator:
    m = min(m, len(data))
    ids, edges = _equal_mass_edges(data.probabilities, m)
    bins = []
    for b in range(m):
        mask = ids == b
        yb = data.labels[mask]
        if len(yb) == 0 or (yb == yb[0]).all():
            bins.append(_constant(_laplace_rate(yb) if len(yb) else 0.5))
        else:
            bins.append(_fit_platt(data.margins[mask], yb, {}))
    return Calibrator("platt_bin", {"edges": edges, "bins": bins}, {"n_bins": m})
