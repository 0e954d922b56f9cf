"""Clustering agreement metrics: ACC, NMI, AMI and ARI.

ACC maps predicted cluster ids onto true class ids with an optimal injective
assignment before counting matches.  NMI normalises mutual information by the
arithmetic mean of the two label entropies.  AMI subtracts the exact expected
mutual information of the fixed-marginal permutation model.  ARI is the
chance-adjusted pair-counting index, computed in exact integer arithmetic.

All public functions return percentages (ARI may be negative); degenerate
partitions (single cluster, n = 1) follow the conventions documented on each
function so every metric is total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class ContingencyTable:
    """Joint counts of (predicted cluster, true class) pairs."""

    counts: np.ndarray        # (k_pred, k_true) nonnegative integers
    pred_marginals: np.ndarray
    true_marginals: np.ndarray
    n: int


@dataclass(frozen=True)
class MetricsReport:
    """The four agreement scores of one clustering, as percentages."""

    acc: float
    nmi: float
    ami: float
    ari: float

    def as_dict(self) -> dict[str, float]:
        return {"acc": self.acc, "nmi": self.nmi, "ami": self.ami, "ari": self.ari}


def _check_pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred)
    t = np.asarray(truth)
    if p.ndim != 1 or t.ndim != 1:
        raise ShapeError("label vectors must be one-dimensional")
    if p.shape != t.shape:
        raise ShapeError(f"label lengths differ: {p.shape[0]} vs {t.shape[0]}")
    if p.size == 0:
        raise ConfigError("label vectors are empty")
    return p.astype(np.int64, copy=False), t.astype(np.int64, copy=False)


def contingency_table(pred, truth) -> ContingencyTable:
    p, t = _check_pair(pred, truth)
    _, pi = np.unique(p, return_inverse=True)
    _, ti = np.unique(t, return_inverse=True)
    kp = int(pi.max()) + 1
    kt = int(ti.max()) + 1
    counts = np.bincount(pi * kt + ti, minlength=kp * kt).reshape(kp, kt)
    return ContingencyTable(
        counts=counts,
        pred_marginals=counts.sum(axis=1),
        true_marginals=counts.sum(axis=0),
        n=int(p.size),
    )


def accuracy(pred, truth) -> float:
    """Percentage of samples matched under the best injective cluster-to-class map.

    The map is found with the Hungarian algorithm on the contingency table,
    zero-padded to square so surplus clusters or classes stay unmatched.
    """
    ct = contingency_table(pred, truth)
    kp, kt = ct.counts.shape
    side = max(kp, kt)
    padded = np.zeros((side, side), dtype=np.int64)
    padded[:kp, :kt] = ct.counts
    rows, cols = linear_sum_assignment(-padded)
    matched = int(padded[rows, cols].sum())
    return (100 * matched) / ct.n


def _entropy(marginals: np.ndarray, n: int) -> float:
    probs = marginals[marginals > 0] / n
    return float(-(probs * np.log(probs)).sum())


def _mutual_information(ct: ContingencyTable) -> float:
    # Every marginal is >= 1 by construction (unique-label reindexing).
    n = ct.n
    lp_pred = np.log(ct.pred_marginals / n)
    lp_true = np.log(ct.true_marginals / n)
    rows, cols = np.nonzero(ct.counts)
    p = ct.counts[rows, cols] / n
    terms = p * (np.log(p) - lp_pred[rows] - lp_true[cols])
    return float(terms.sum())


def nmi(pred, truth) -> float:
    """Normalised mutual information (arithmetic-mean normalisation), in percent.

    Two identical trivial partitions (both entropies zero) score 100; when the
    partitions share no information the score is 0.
    """
    ct = contingency_table(pred, truth)
    hu = _entropy(ct.pred_marginals, ct.n)
    hv = _entropy(ct.true_marginals, ct.n)
    if hu == 0.0 and hv == 0.0:
        return 100.0
    mi = _mutual_information(ct)
    if mi <= 0.0:
        return 0.0
    return min(100.0, 100.0 * mi / (0.5 * (hu + hv)))


def expected_mutual_information(pred_marginals, true_marginals, n: int) -> float:
    """Exact E[I] under the fixed-marginal permutation (hypergeometric) model.

    Natural-log scale, i.e. directly comparable with the observed mutual
    information of the contingency table.
    """
    a = np.asarray(pred_marginals, dtype=np.int64)
    b = np.asarray(true_marginals, dtype=np.int64)
    log_fact_n = math.lgamma(n + 1)
    total = 0.0
    for ai in a[a > 0]:
        ai = int(ai)
        for bj in b[b > 0]:
            bj = int(bj)
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            for nij in range(lo, hi + 1):
                log_prob = (
                    math.lgamma(ai + 1) + math.lgamma(bj + 1)
                    + math.lgamma(n - ai + 1) + math.lgamma(n - bj + 1)
                    - log_fact_n - math.lgamma(nij + 1)
                    - math.lgamma(ai - nij + 1) - math.lgamma(bj - nij + 1)
                    - math.lgamma(n - ai - bj + nij + 1)
                )
                total += math.exp(log_prob) * (nij / n) * math.log(n * nij / (ai * bj))
    return total


def ami(pred, truth) -> float:
    """Adjusted mutual information (permutation-model expectation), in percent.

    Clamped to [0, 100]: a score at or below chance level reports 0.  When the
    adjustment denominator vanishes (both partitions trivial) the score is 100
    if the mutual information equals its expectation, else 0.
    """
    ct = contingency_table(pred, truth)
    hu = _entropy(ct.pred_marginals, ct.n)
    hv = _entropy(ct.true_marginals, ct.n)
    mi = _mutual_information(ct)
    emi = expected_mutual_information(ct.pred_marginals, ct.true_marginals, ct.n)
    denom = 0.5 * (hu + hv) - emi
    if abs(denom) < 1e-15:
        return 100.0 if abs(mi - emi) < 1e-12 else 0.0
    value = (mi - emi) / denom
    return min(100.0, max(0.0, 100.0 * value))


def _comb2(x: int) -> int:
    return x * (x - 1) // 2


def ari(pred, truth) -> float:
    """Adjusted Rand index in percent, exact up to one float division.

    Both trivial-partition degeneracies (all-in-one and all-singletons on both
    sides) have a vanishing adjustment denominator and score 100.
    """
    ct = contingency_table(pred, truth)
    n = ct.n
    sum_nij2 = int(sum(_comb2(int(c)) for c in ct.counts.ravel()))
    t1 = int(sum(_comb2(int(x)) for x in ct.pred_marginals))
    t2 = int(sum(_comb2(int(x)) for x in ct.true_marginals))
    cn2 = _comb2(n)
    # 100 * (sum_nij2 - t1*t2/cn2) / ((t1+t2)/2 - t1*t2/cn2), cleared of denominators.
    num = 2 * cn2 * sum_nij2 - 2 * t1 * t2
    den = cn2 * (t1 + t2) - 2 * t1 * t2
    if den == 0:
        return 100.0
    return (100 * num) / den


def evaluate(pred, truth) -> MetricsReport:
    """All four metrics for one (predicted, true) labelling pair."""
    return MetricsReport(
        acc=accuracy(pred, truth),
        nmi=nmi(pred, truth),
        ami=ami(pred, truth),
        ari=ari(pred, truth),
    )


def mean_report(reports: list[MetricsReport]) -> MetricsReport:
    if not reports:
        raise ConfigError("cannot average an empty list of reports")
    return MetricsReport(
        acc=float(np.mean([r.acc for r in reports])),
        nmi=float(np.mean([r.nmi for r in reports])),
        ami=float(np.mean([r.ami for r in reports])),
        ari=float(np.mean([r.ari for r in reports])),
    )
