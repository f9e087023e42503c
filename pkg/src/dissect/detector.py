"""Kernel SVM detectors, AUC and bootstrap confidence intervals.

Scores follow one polarity throughout: higher means "more clean". Labels
are 1 for clean inputs and 0 for adversarial ones.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import ConvergenceError, DegenerateLabelsError, ShapeError


def _gram_values(gram):
    return np.asarray(getattr(gram, "values", gram), dtype=np.float64)


def _check_self_gram(K):
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ShapeError(f"expected a square gram matrix, got shape {K.shape}")
    if not np.allclose(K, K.T, rtol=0, atol=1e-10):
        raise ValueError("gram matrix is not symmetric")
    lam = np.linalg.eigvalsh(K)
    if lam[0] < -1e-8 * max(1.0, lam[-1]):
        raise ValueError(f"gram matrix is not positive semi-definite (eigenvalue {lam[0]:.3e})")


# --------------------------------------------------------------------------
# One-class SVM
# --------------------------------------------------------------------------


@dataclass
class OneClassModel:
    alpha: np.ndarray
    rho: float
    nu: float
    iterations: int = 0

    @property
    def support(self):
        return np.flatnonzero(self.alpha > 0)

    def decision_function(self, cross_gram):
        """Scores for new items; ``cross_gram[i, j] = k(new_i, train_j)``."""
        K = _gram_values(cross_gram)
        if K.shape[1] != len(self.alpha):
            raise ShapeError(f"cross gram has {K.shape[1]} columns, model has {len(self.alpha)} items")
        return K @ self.alpha - self.rho


def fit_one_class(gram, nu: float = 0.1, tol: float = 1e-6, max_iter: int = 1_000_000) -> OneClassModel:
    """Schölkopf one-class SVM by pairwise coordinate descent on the dual

    ``min 1/2 a'Ka  s.t.  0 <= a_i <= 1/(nu n),  sum a_i = 1``

    Each step moves mass between the maximally KKT-violating pair and solves
    the two-variable subproblem exactly.
    """
    K = _gram_values(gram)
    _check_self_gram(K)
    if not 0 < nu < 1:
        raise ValueError(f"nu must lie in (0, 1), got {nu}")
    n = len(K)
    C = 1.0 / (nu * n)
    alpha = np.zeros(n)
    full = min(n, int(np.floor(nu * n)))
    alpha[:full] = C
    if full < n:
        alpha[full] = 1.0 - full * C
    G = K @ alpha
    diag = np.diag(K)
    for it in range(max_iter):
        up = alpha < C
        low = alpha > 0
        Gu = np.where(up, G, np.inf)
        Gl = np.where(low, G, -np.inf)
        i = int(np.argmin(Gu))
        j = int(np.argmax(Gl))
        gap = Gl[j] - Gu[i]
        if gap <= tol:
            break
        eta = max(diag[i] + diag[j] - 2.0 * K[i, j], 1e-12)
        delta = min(gap / eta, C - alpha[i], alpha[j])
        alpha[i] = C if delta == C - alpha[i] else alpha[i] + delta
        alpha[j] = 0.0 if delta == alpha[j] else alpha[j] - delta
        G += delta * (K[:, i] - K[:, j])
    else:
        raise ConvergenceError(max_iter, gap)
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(G[free].mean())
    else:
        at_upper = G[alpha >= C]
        at_lower = G[alpha <= 0]
        hi = at_lower.min() if at_lower.size else G.max()
        lo = at_upper.max() if at_upper.size else G.min()
        rho = float((hi + lo) / 2)
    return OneClassModel(alpha, rho, nu, it)


# --------------------------------------------------------------------------
# Two-class SVM
# --------------------------------------------------------------------------


@dataclass
class BinaryModel:
    coef: np.ndarray  # y_i * alpha_i
    rho: float
    C: float
    iterations: int = 0

    def decision_function(self, cross_gram):
        K = _gram_values(cross_gram)
        if K.shape[1] != len(self.coef):
            raise ShapeError(f"cross gram has {K.shape[1]} columns, model has {len(self.coef)} items")
        return K @ self.coef - self.rho


def _snap(a, C):
    if abs(a) <= 1e-12 * C:
        return 0.0
    if abs(a - C) <= 1e-12 * C:
        return C
    return a


def fit_binary(gram, labels, C: float = 1.0, tol: float = 1e-6, max_iter: int = 1_000_000) -> BinaryModel:
    """Soft-margin kernel SVM (SMO with maximal-violating-pair selection).

    ``labels``: 1 for clean, 0 for adversarial. Positive decision values
    mean clean.
    """
    K = _gram_values(gram)
    _check_self_gram(K)
    labels = np.asarray(labels)
    if len(labels) != len(K):
        raise ShapeError(f"{len(labels)} labels for a gram of size {len(K)}")
    if C <= 0:
        raise ValueError("C must be positive")
    y = np.where(labels == 1, 1.0, -1.0)
    if np.all(y == 1) or np.all(y == -1):
        raise DegenerateLabelsError("training labels contain a single class")
    n = len(K)
    alpha = np.zeros(n)
    G = -np.ones(n)  # gradient of 1/2 a'Qa - e'a
    diag = np.diag(K)
    for it in range(max_iter):
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
        v = -y * G
        vu = np.where(up, v, -np.inf)
        vl = np.where(low, v, np.inf)
        i = int(np.argmax(vu))
        j = int(np.argmin(vl))
        gap = vu[i] - vl[j]
        if gap <= tol:
            break
        eta = max(diag[i] + diag[j] - 2.0 * K[i, j], 1e-12)
        t = gap / eta
        # alpha_i += y_i t, alpha_j -= y_j t, both kept in [0, C]
        if y[i] > 0:
            t = min(t, C - alpha[i])
        else:
            t = min(t, alpha[i])
        if y[j] > 0:
            t = min(t, alpha[j])
        else:
            t = min(t, C - alpha[j])
        alpha[i] = _snap(alpha[i] + y[i] * t, C)
        alpha[j] = _snap(alpha[j] - y[j] * t, C)
        G += y * (K[:, i] - K[:, j]) * t
    else:
        raise ConvergenceError(max_iter, gap)
    yG = y * G
    at_upper = alpha >= C
    at_lower = alpha <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        rho = float(yG[free].mean())
    else:
        ub_set = (at_upper & (y < 0)) | (at_lower & (y > 0))
        lb_set = (at_upper & (y > 0)) | (at_lower & (y < 0))
        ub = yG[ub_set].min() if ub_set.any() else np.inf
        lb = yG[lb_set].max() if lb_set.any() else -np.inf
        rho = float((ub + lb) / 2)
    return BinaryModel(y * alpha, rho, C, it)


# --------------------------------------------------------------------------
# AUC and bootstrap
# --------------------------------------------------------------------------


def _split_labels(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ShapeError(f"{len(scores)} scores but {len(labels)} labels")
    pos = labels == 1
    if pos.all() or not pos.any():
        raise DegenerateLabelsError("AUC needs both clean and adversarial items")
    return scores, pos


def auc(scores, labels) -> float:
    """P(clean score > adversarial score) + 1/2 P(tie), via mid-ranks."""
    scores, pos = _split_labels(scores, labels)
    ranks = rankdata(scores)
    n_pos = int(pos.sum())
    n_neg = len(scores) - n_pos
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def bootstrap_ci(scores, labels, B: int = 100, seed: int = 0, max_retries: int = 10):
    """80% interval ``(2 AUC - c90, 2 AUC - c10)`` from ``B`` resamples of size n//2.

    Clean and adversarial items are resampled separately, in proportion to
    their counts, with replacement.
    """
    scores, pos = _split_labels(scores, labels)
    n = len(scores)
    if n < 10:
        raise ValueError(f"bootstrap needs at least 10 items, got {n}")
    full = auc(scores, pos.astype(int))
    idx_pos = np.flatnonzero(pos)
    idx_neg = np.flatnonzero(~pos)
    size = n // 2
    m_pos = int(round(len(idx_pos) * size / n))
    m_pos = min(max(m_pos, 1), size - 1)
    m_neg = size - m_pos
    rng = np.random.default_rng(seed)
    stats = []
    for _ in range(B):
        for _attempt in range(max_retries + 1):
            take = np.concatenate(
                [rng.choice(idx_pos, m_pos, replace=True), rng.choice(idx_neg, m_neg, replace=True)]
            )
            lab = pos[take]
            if lab.any() and not lab.all():
                break
        else:
            raise DegenerateLabelsError("bootstrap kept drawing a single class")
        stats.append(auc(scores[take], lab.astype(int)))
    c10, c90 = np.percentile(stats, [10, 90])
    return float(2 * full - c90), float(2 * full - c10)


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


@dataclass
class DetectionReport:
    auc: float
    ci_low: float
    ci_high: float
    scores: list
    labels: list
    config: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def csv_row(self):
        row = {"auc": self.auc, "ci_low": self.ci_low, "ci_high": self.ci_high}
        for key in ("feature", "mode", "epsilon", "q", "criterion", "edge_direction", "directions", "seed"):
            row[key] = self.config.get(key)
        row["sigma"] = self.details.get("sigma")
        return row


def write_reports_csv(reports, path):
    rows = [r.csv_row() for r in reports]
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]) if rows else ["auc"])
        w.writeheader()
        w.writerows(rows)
