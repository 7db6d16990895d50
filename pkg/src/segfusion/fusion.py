"""Consensus segmentation by best-one-element moves.

Both fusion modes share one engine. The state is the current consensus
labeling, one contingency table against every ensemble member, and an
accumulated move matrix ``H`` whose entry ``(b, c)`` approximates the
objective change from relabeling unit ``b`` to ``c``. A unit is a single
pixel, or a whole must-link component when constraints are present, so
must-links can never be broken by a move. Cannot-link violations get an
infinite move cost.
"""

from __future__ import annotations

import logging
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    ConstraintSet,
    ContingencyTable,
    Ensemble,
    InconsistentConstraints,
    Segmentation,
    SoftConnectivity,
    joint_counts,
)
from .metrics import ConnectivityGram, pair_counts, sdd
from .weights import SolverConfig, check_simplex, resolve_lambda, solve_l1

log = logging.getLogger(__name__)

USF = "usf"
SSSF = "sssf"


@dataclass(frozen=True)
class FusionConfig:
    beta: float = 0.9
    T: int = 1000
    C_hat: int | None = None  # None: largest member label count
    seed: int = 0
    mode: str = USF
    solver: SolverConfig = field(default_factory=SolverConfig)
    fixed_weights: tuple | None = None  # SSSF: skip weight learning
    # distances for weight learning are taken to the current consensus
    # labeling ("consensus") or to the weighted member average ("soft")
    weight_target: str = "consensus"
    # accept a move only if it also lowers the exact weighted objective
    exact_guard: bool = True

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.C_hat is not None and self.C_hat < 1:
            raise ValueError("C_hat must be at least 1")
        if self.mode not in (USF, SSSF):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.weight_target not in ("consensus", "soft"):
            raise ValueError(f"unknown weight target {self.weight_target!r}")


@dataclass
class FusionResult:
    segmentation: Segmentation
    weights: np.ndarray | None
    log: list  # (t, member, objective, move or None)
    sparsity: np.ndarray | None = None
    solver_failures: int = 0

    def __iter__(self):
        # allows ``s, w = fuse_sssf(...)``
        return iter((self.segmentation, self.weights))


def bok_init(ens: Ensemble, weights=None) -> Segmentation:
    """Member with the smallest (weighted) summed distance to all members."""
    k = len(ens)
    dist = np.zeros((k, k), dtype=object)
    for i in range(k):
        for j in range(i + 1, k):
            dist[i, j] = dist[j, i] = sdd(ens[i], ens[j])
    if weights is None:
        totals = [sum(dist[i]) for i in range(k)]
    else:
        w = np.asarray(weights, dtype=float)
        totals = [float(np.dot(dist[i].astype(float), w)) for i in range(k)]
    return ens[int(np.argmin(totals))]


def move_delta(ref: Segmentation, cur: Segmentation, t: ContingencyTable, n: int, c: int) -> int:
    """Change of ``sdd(ref, cur)`` when pixel ``n`` of ``cur`` is relabeled ``c``.

    ``t`` must be ``contingency(ref, cur)``; ``c`` may exceed the labels
    used by ``cur`` as long as ``t`` has a column for it.
    """
    if not 0 <= n < cur.n:
        raise IndexError(f"pixel {n} outside {cur.n} pixels")
    if not 0 <= c < t.counts.shape[1]:
        raise IndexError(f"label {c} outside {t.counts.shape[1]} consensus labels")
    a = int(cur.labels[n])
    if c == a:
        return 0
    b = int(ref.labels[n])
    col = t.col_sums
    # marginals and joint counts with pixel n removed
    return int((col[c]) - (col[a] - 1) - 2 * t.counts[b, c] + 2 * (t.counts[b, a] - 1))


def consensus_connectivity(ens: Ensemble, w, cons: ConstraintSet | None = None) -> SoftConnectivity:
    w = np.asarray(w, dtype=float)
    check_simplex(w)
    return SoftConnectivity(ens, w, cons if cons is not None else ConstraintSet())


def _fit_label_budget(labels: np.ndarray, c_hat: int) -> np.ndarray:
    """Map labels into ``0..c_hat-1``; overflow segments join the last kept one.

    Segments are ranked by size (then label), so the largest keep their
    identity.
    """
    counts = np.bincount(labels)
    if np.count_nonzero(counts) <= c_hat and labels.max() < c_hat:
        return labels.copy()
    order = np.lexsort((np.arange(len(counts)), -counts))
    rank = np.empty(len(counts), dtype=np.int64)
    rank[order] = np.arange(len(counts))
    return np.minimum(rank[labels], c_hat - 1)


class _Engine:
    """Mutable fusion state; units are must-link components (or pixels)."""

    def __init__(self, ens: Ensemble, labels: np.ndarray, c_hat: int, unit: np.ndarray,
                 cannot_link: np.ndarray):
        self.ens = ens
        self.c_hat = c_hat
        self.unit = unit
        nb = int(unit.max()) + 1
        self.nb = nb
        self.size = np.bincount(unit, minlength=nb).astype(np.int64)
        first = np.full(nb, -1)
        first[unit[::-1]] = np.arange(len(unit))[::-1]
        self.ulabel = labels[first].astype(np.int64)
        self.R, self.R2, self.J = [], [], []
        for s in ens:
            r = np.zeros((nb, s.num_labels), dtype=np.int64)
            np.add.at(r, (unit, s.labels), 1)
            self.R.append(r)
            self.R2.append((r * r).sum(axis=1))
            self.J.append(joint_counts(s.labels, self.labels(), s.num_labels, c_hat))
        self.dist = np.array([self._sdd(i) for i in range(len(ens))], dtype=np.int64)

        # cannot-link between units: forbid[b, c] = number of partners labeled c
        if len(cannot_link):
            pairs = np.unique(np.sort(unit[cannot_link], axis=1), axis=0)
            if np.any(pairs[:, 0] == pairs[:, 1]):
                raise InconsistentConstraints(cannot_link[0])
        else:
            pairs = np.zeros((0, 2), dtype=np.int64)
        self.cl_pairs = pairs
        nbrs = [[] for _ in range(nb)]
        for x, y in pairs:
            nbrs[x].append(y)
            nbrs[y].append(x)
        self.nbrs = [np.asarray(v, dtype=np.int64) for v in nbrs]
        self.forbid = np.zeros((nb, c_hat), dtype=np.int64)
        if len(pairs):
            np.add.at(self.forbid, (pairs[:, 0], self.ulabel[pairs[:, 1]]), 1)
            np.add.at(self.forbid, (pairs[:, 1], self.ulabel[pairs[:, 0]]), 1)

    def labels(self) -> np.ndarray:
        return self.ulabel[self.unit]

    def segmentation(self) -> Segmentation:
        return Segmentation(self.labels(), self.ens.width, self.ens.height, self.c_hat)

    def _sdd(self, i) -> int:
        pc = pair_counts(ContingencyTable(self.J[i]))
        return pc.n10 + pc.n01

    def member_delta(self, i) -> np.ndarray:
        """Exact sdd change against member i for every (unit, label) move."""
        J, R = self.J[i], self.R[i]
        a = self.ulabel
        rows = np.arange(self.nb)
        col = J.sum(axis=0)
        rj = R @ J
        sz = self.size[:, None]
        d = (sz * (col[None, :] - col[a][:, None] + sz)
             - 2 * (rj - rj[rows, a][:, None])
             - 2 * self.R2[i][:, None])
        d[rows, a] = 0
        return d

    def exact_delta(self, b, c) -> np.ndarray:
        """Per-member sdd change of moving unit b to label c."""
        a = self.ulabel[b]
        out = np.zeros(len(self.ens), dtype=np.int64)
        if c == a:
            return out
        sz = self.size[b]
        for i, (J, R) in enumerate(zip(self.J, self.R)):
            col_c, col_a = J[:, c].sum(), J[:, a].sum()
            r = R[b]
            out[i] = sz * (col_c - col_a + sz) - 2 * (r @ J[:, c] - r @ J[:, a]) - 2 * self.R2[i][b]
        return out

    def apply(self, b, c, delta=None):
        a = self.ulabel[b]
        if delta is None:
            delta = self.exact_delta(b, c)
        for J, R in zip(self.J, self.R):
            J[:, a] -= R[b]
            J[:, c] += R[b]
        self.dist += delta
        self.ulabel[b] = c
        nb = self.nbrs[b]
        if len(nb):
            self.forbid[nb, a] -= 1
            self.forbid[nb, c] += 1

    def violations(self) -> int:
        p = self.cl_pairs
        return int(np.count_nonzero(self.ulabel[p[:, 0]] == self.ulabel[p[:, 1]]))

    def conflicted(self) -> np.ndarray:
        return np.flatnonzero(self.forbid[np.arange(self.nb), self.ulabel] > 0)

    def repair(self, w):
        """Relabel units until no cannot-link pair shares a label.

        A greedy sweep (largest units first) moves each conflicting unit to
        the free label with the smallest weighted objective change. Units
        left without a free label trigger an exact coloring search.
        """
        if not len(self.cl_pairs):
            return
        for b in sorted(self.conflicted(), key=lambda u: (-self.size[u], u)):
            if self.forbid[b, self.ulabel[b]] == 0:
                continue
            allowed = np.flatnonzero(self.forbid[b] == 0)
            if len(allowed):
                costs = [float(w @ self.exact_delta(b, c)) for c in allowed]
                self.apply(b, int(allowed[int(np.argmin(costs))]))
        if len(self.conflicted()):
            self._color_exactly()

    def _color_exactly(self, max_steps=2_000_000):
        """DSatur backtracking over the constrained units.

        Each unit tries its current label first. Raises when the search
        proves that no labeling within the budget exists, or gives up.
        """
        nodes = [b for b in range(self.nb) if len(self.nbrs[b])]
        color = {b: -1 for b in nodes}
        steps = 0

        def pick():
            best, key = None, None
            for b in nodes:
                if color[b] >= 0:
                    continue
                used = {color[x] for x in self.nbrs[b] if color[x] >= 0}
                k = (len(used), len(self.nbrs[b]), -b)
                if key is None or k > key:
                    best, key = b, k
            return best

        def solve():
            nonlocal steps
            b = pick()
            if b is None:
                return True
            steps += 1
            if steps > max_steps:
                return False
            used = {color[x] for x in self.nbrs[b] if color[x] >= 0}
            cur = int(self.ulabel[b])
            for c in [cur] + [c for c in range(self.c_hat) if c != cur]:
                if c in used:
                    continue
                color[b] = c
                if solve():
                    return True
            color[b] = -1
            return False

        limit = sys.getrecursionlimit()
        sys.setrecursionlimit(max(limit, len(nodes) + 100))
        try:
            found = solve()
        finally:
            sys.setrecursionlimit(limit)
        if not found:
            raise InconsistentConstraints(
                tuple(self.cl_pairs[0]),
                f"no labeling with {self.c_hat} labels satisfies the cannot-link pairs",
            )
        for b in nodes:
            if color[b] != self.ulabel[b]:
                self.apply(b, color[b])


def _unit_majority(unit, labels, nb):
    """Most frequent current label inside each unit (ties: smallest)."""
    c = int(labels.max()) + 1
    counts = np.zeros((nb, c), dtype=np.int64)
    np.add.at(counts, (unit, labels), 1)
    return counts.argmax(axis=1)[unit]


def _run(ens: Ensemble, cfg: FusionConfig, cons: ConstraintSet, learn: bool,
         w0: np.ndarray) -> FusionResult:
    k = len(ens)
    c_hat = cfg.C_hat or max(s.num_labels for s in ens)
    cons.check(ens.n)
    unit = cons.components(ens.n)
    nb = int(unit.max()) + 1
    rng = np.random.default_rng(cfg.seed)

    w = w0.copy()
    init = bok_init(ens, None if np.allclose(w, w[0]) else w)
    labels = _fit_label_budget(init.labels, c_hat)
    if nb < ens.n:
        labels = _unit_majority(unit, labels, nb)
    eng = _Engine(ens, labels, c_hat, unit, cons.cannot_link)
    eng.repair(w)

    soft = learn and cfg.weight_target == "soft"
    gram = ConnectivityGram(ens, cons, unit) if soft else None
    lam = 0.0
    failures = 0
    sparsity = None

    # H is accumulated with weights scaled to a unit maximum, so equal
    # weights reproduce the unweighted accumulation bit for bit
    hw = w / w.max()
    H = np.zeros((nb, c_hat))
    for i in range(k):
        if hw[i] != 0:
            H += hw[i] * eng.member_delta(i)
    history = [(1, -1, float(w @ eng.dist), None)]

    order, pos, accepted_in_pass = rng.permutation(k), 0, 0
    for t in range(2, cfg.T + 1):
        if pos == k:
            if accepted_in_pass == 0:
                break
            order, pos, accepted_in_pass = rng.permutation(k), 0, 0
        i = int(order[pos])
        pos += 1

        if learn:
            # the consensus satisfies every constraint, so its clamped
            # connectivity is its own and the distances are plain sdd values
            d = gram.member_distances(w) if soft else eng.dist.astype(float)
            sol = solve_l1(d, cfg.solver, warn=False)
            failures += not sol.converged
            w, sparsity = sol.w, sol.z
            hw = w / w.max()
            lam = resolve_lambda(d, cfg.solver)

        H *= cfg.beta
        if hw[i] != 0:
            H += hw[i] * eng.member_delta(i)
        masked = np.where(eng.forbid > 0, np.inf, H)
        flat = int(np.argmin(masked))
        b, c = divmod(flat, c_hat)
        move = None
        if masked[b, c] < 0:
            delta = eng.exact_delta(b, c)
            if not cfg.exact_guard or float(w @ delta) < 0:
                H[b] -= H[b, c]  # re-reference the row to the new label
                eng.apply(b, c, delta)
                move = (int(b), int(c))
                accepted_in_pass += 1
        history.append((t, i, float(w @ eng.dist) + lam * float(np.abs(w).sum()), move))

    if eng.violations():
        eng.repair(w)
    out = eng.segmentation()
    if failures:
        log.warning("weight solver hit its iteration limit %d times", failures)
    return FusionResult(out, w, history, sparsity, failures)


def fuse_usf(ens: Ensemble, cfg: FusionConfig = FusionConfig()) -> FusionResult:
    """Unsupervised fusion: every member counts equally, no constraints."""
    k = len(ens)
    return _run(ens, replace(cfg, mode=USF), ConstraintSet(), False, np.ones(k))


def fuse_sssf(ens: Ensemble, cons: ConstraintSet | None = None,
              cfg: FusionConfig = FusionConfig(mode=SSSF)) -> FusionResult:
    """Semi-supervised fusion with learned sparse member weights.

    With ``cfg.fixed_weights`` the weights are held fixed (the test phase
    of a train/test protocol); otherwise they are re-solved at every step.
    """
    k = len(ens)
    cons = cons if cons is not None else ConstraintSet()
    if cfg.fixed_weights is not None:
        w0 = np.asarray(cfg.fixed_weights, dtype=float)
        if w0.shape != (k,):
            raise ValueError(f"expected {k} fixed weights, got {w0.shape}")
        check_simplex(w0, 1e-6)
        return _run(ens, replace(cfg, mode=SSSF), cons, False, w0 / w0.sum())
    return _run(ens, replace(cfg, mode=SSSF), cons, True, np.full(k, 1.0 / k))
