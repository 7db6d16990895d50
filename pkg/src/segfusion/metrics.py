"""Pair-counting distances and chance-corrected agreement indices.

Every pair quantity is over unordered pixel pairs ``m < l``. The double sum
over all ordered pairs used in some texts is exactly twice these values
(diagonal terms vanish).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb, fsum

import numpy as np
from scipy.special import gammaln

from .core import (
    ContingencyTable,
    DimensionMismatch,
    Segmentation,
    SoftConnectivity,
    contingency,
    joint_counts,
)


@dataclass(frozen=True)
class PairCounts:
    n11: int  # co-segmented in both
    n10: int  # co-segmented in the first only
    n01: int  # co-segmented in the second only
    n00: int  # co-segmented in neither

    @property
    def total(self) -> int:
        return self.n11 + self.n10 + self.n01 + self.n00


def _sum_comb2(x) -> int:
    x = np.asarray(x, dtype=np.int64).ravel()
    # exact: Python ints, x*(x-1) fits in int64 for any realistic count
    return int((x * (x - 1) // 2).sum(dtype=object)) if x.size else 0


def pair_counts(t: ContingencyTable) -> PairCounts:
    n11 = _sum_comb2(t.counts)
    n10 = _sum_comb2(t.row_sums) - n11
    n01 = _sum_comb2(t.col_sums) - n11
    n00 = comb(t.total, 2) - n11 - n10 - n01
    return PairCounts(n11, n10, n01, n00)


def sdd(a: Segmentation, b: Segmentation) -> int:
    """Symmetric distance: pairs co-segmented in exactly one of ``a``, ``b``."""
    pc = pair_counts(contingency(a, b))
    return pc.n10 + pc.n01


def connectivity_entry(s: Segmentation, m: int, l: int) -> int:
    if not (0 <= m < s.n and 0 <= l < s.n):
        raise IndexError(f"pixel pair ({m}, {l}) outside {s.n} pixels")
    return int(s.labels[m] == s.labels[l])


def pairwise_d(a: Segmentation, b: Segmentation, m: int, l: int) -> int:
    if a.n != b.n:
        raise DimensionMismatch(f"segmentations have {a.n} and {b.n} pixels")
    return (connectivity_entry(a, m, l) - connectivity_entry(b, m, l)) ** 2


def bregman_divergence(x, y, kappa=np.square, grad=lambda v: 2 * v):
    """``kappa(x) - kappa(y) - grad(y) (x - y)``; squared error by default."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return kappa(x) - kappa(y) - grad(y) * (x - y)


def _co_labeled(labelings, component, cannot_link) -> tuple[int, int]:
    """Constrained pairs co-labeled in every one of ``labelings``.

    Returns ``(must, cannot)``: the count among must-link closure pairs
    (pixel pairs sharing a ``component``) and among ``cannot_link`` rows.
    """
    key = component.astype(np.int64)
    for lab in labelings:
        width = int(lab.max()) + 1
        key = key * width + lab
    _, counts = np.unique(key, return_counts=True)
    must = _sum_comb2(counts)
    if len(cannot_link):
        same = np.ones(len(cannot_link), dtype=bool)
        for lab in labelings:
            same &= lab[cannot_link[:, 0]] == lab[cannot_link[:, 1]]
        cannot = int(same.sum())
    else:
        cannot = 0
    return must, cannot


class ConnectivityGram:
    """Pair statistics of a fixed ensemble under a fixed constraint set.

    ``q[i, j]`` counts unconstrained pairs co-segmented in both members i
    and j; ``miss[i]`` counts constrained pairs on which member i disagrees
    with its constraint. Together they give every member's Bregman distance
    to a soft consensus in O(K^2).
    """

    def __init__(self, ensemble, constraints, component=None):
        if component is None:
            component = constraints.components(ensemble.n)
        labs = [s.labels for s in ensemble]
        k = len(labs)
        cl = constraints.cannot_link
        self.component = component
        self.cannot_link = cl
        self.ml_pairs, _ = _co_labeled([], component, cl[:0])
        self.q = np.zeros((k, k))
        self.miss = np.zeros(k)
        for i in range(k):
            for j in range(i, k):
                a, b = ensemble[i], ensemble[j]
                n11 = _sum_comb2(joint_counts(a.labels, b.labels, a.num_labels, b.num_labels))
                must, cannot = _co_labeled([labs[i], labs[j]], component, cl)
                self.q[i, j] = self.q[j, i] = n11 - must - cannot
            must, cannot = _co_labeled([labs[i]], component, cl)
            self.miss[i] = (self.ml_pairs - must) + cannot

    def member_distances(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        qw = self.q @ w
        return float(w @ qw) - 2.0 * qw + np.diag(self.q) + self.miss


def bregman_connectivity_distance(p: SoftConnectivity, s: Segmentation) -> float:
    """Sum over pixel pairs of ``(p_ml - M_ml(s))**2``.

    Uses the squared-error Bregman divergence. Evaluated from contingency
    tables and constrained-pair tallies only.
    """
    ens = p.ensemble
    if s.n != ens.n:
        raise DimensionMismatch(f"target has {s.n} pixels, consensus {ens.n}")
    w = p.weights
    comp = p.component
    cl = p.constraints.cannot_link
    gram = ConnectivityGram(ens, p.constraints, comp)
    ml_pairs = gram.ml_pairs

    # unconstrained part: sum_U (w.B - M_s)^2 = w'Qw - 2 w.X + Y
    s_must, s_cannot = _co_labeled([s.labels], comp, cl)
    y = _sum_comb2(np.bincount(s.labels)) - s_must - s_cannot
    x = np.zeros(len(ens))
    for i, m in enumerate(ens):
        n11 = _sum_comb2(contingency(m, s).counts)
        must, cannot = _co_labeled([m.labels, s.labels], comp, cl)
        x[i] = n11 - must - cannot
    free = float(w @ gram.q @ w) - 2.0 * float(w @ x) + y
    # constrained part: clamped value 1 on must-link, 0 on cannot-link
    clamped = (ml_pairs - s_must) + s_cannot
    return max(free + clamped, 0.0)


def rand_index(a: Segmentation, b: Segmentation) -> float:
    if a.n < 2:
        raise ValueError("rand index needs at least two pixels")
    pc = pair_counts(contingency(a, b))
    return (pc.n11 + pc.n00) / pc.total


def adjusted_rand_index(a: Segmentation, b: Segmentation) -> float:
    if a.n < 2:
        raise ValueError("adjusted rand index needs at least two pixels")
    t = contingency(a, b)
    index = _sum_comb2(t.counts)
    ra = _sum_comb2(t.row_sums)
    rb = _sum_comb2(t.col_sums)
    expected = ra * rb / comb(t.total, 2)
    top = (ra + rb) / 2
    if top == expected:
        return 1.0
    return (index - expected) / (top - expected)


def _entropy(counts, n) -> float:
    # fsum is order independent, so equal count multisets give equal entropies
    p = np.asarray(counts)[np.asarray(counts) > 0] / n
    return -fsum(p * np.log(p))


def _mutual_information(t: ContingencyTable) -> float:
    n = t.total
    return _entropy(t.row_sums, n) + _entropy(t.col_sums, n) - _entropy(t.counts.ravel(), n)


def expected_mutual_information(t: ContingencyTable) -> float:
    """E[MI] under the hypergeometric model with fixed marginals."""
    n = t.total
    a = t.row_sums[t.row_sums > 0].astype(np.int64)
    b = t.col_sums[t.col_sums > 0].astype(np.int64)
    lf = gammaln(np.arange(n + 1) + 1.0)  # lf[k] = log k!
    emi = 0.0
    for ai in a:
        for bj in b:
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            if lo > hi:
                continue
            k = np.arange(lo, hi + 1)
            term = k / n * (np.log(n * k) - np.log(ai * bj))
            logp = (
                lf[ai] + lf[bj] + lf[n - ai] + lf[n - bj]
                - lf[n] - lf[k] - lf[ai - k] - lf[bj - k] - lf[n - ai - bj + k]
            )
            emi += float((term * np.exp(logp)).sum())
    return emi


def adjusted_mutual_information(a: Segmentation, b: Segmentation) -> float:
    """Chance-adjusted MI, normalized by the larger of the two entropies."""
    if a.n < 2:
        raise ValueError("adjusted mutual information needs at least two pixels")
    t = contingency(a, b)
    n = t.total
    mi = _mutual_information(t)
    emi = expected_mutual_information(t)
    top = max(_entropy(t.row_sums, n), _entropy(t.col_sums, n))
    denom = top - emi
    if abs(denom) < 1e-12:
        return 1.0
    return (mi - emi) / denom


def evaluate(output: Segmentation, truth: Segmentation) -> dict:
    return {
        "RI": rand_index(output, truth),
        "ARI": adjusted_rand_index(output, truth),
        "AMI": adjusted_mutual_information(output, truth),
    }
