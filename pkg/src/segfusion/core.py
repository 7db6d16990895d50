"""Domain types shared across the package: segmentations, ensembles,
contingency tables and pairwise constraint sets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


class DimensionMismatch(ValueError):
    """Two objects that must share a pixel grid do not."""


class InconsistentConstraints(ValueError):
    """A must-link closure contains a cannot-link pair."""

    def __init__(self, pair, message=None):
        self.pair = tuple(int(v) for v in pair)
        super().__init__(message or f"cannot-link pair {self.pair} is implied by must-link closure")


def _frozen(arr, dtype=np.int64):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Segmentation:
    """Hard labeling of a ``width x height`` grid, stored row-major.

    ``source_values`` optionally records the original value of every dense
    label when the labeling was read from a file with arbitrary label values.
    """

    labels: np.ndarray
    width: int
    height: int
    num_labels: int = -1
    source_values: tuple | None = None

    def __post_init__(self):
        labels = _frozen(np.ravel(self.labels))
        object.__setattr__(self, "labels", labels)
        n = int(self.width) * int(self.height)
        if n <= 0:
            raise ValueError("segmentation must have at least one pixel")
        if labels.size != n:
            raise DimensionMismatch(f"{labels.size} labels for a {self.width}x{self.height} grid")
        if labels.min() < 0:
            raise ValueError("labels must be non-negative")
        top = int(labels.max()) + 1
        if self.num_labels < 0:
            object.__setattr__(self, "num_labels", top)
        elif top > self.num_labels:
            raise ValueError(f"label {top - 1} out of range for num_labels={self.num_labels}")

    @classmethod
    def from_labels(cls, labels, width=None, height=None, num_labels=-1):
        """Build from a flat sequence or a 2-D array of labels."""
        arr = np.asarray(labels)
        if arr.ndim == 2 and width is None:
            height, width = arr.shape
        elif width is None:
            width, height = arr.size, 1
        elif height is None:
            height = arr.size // width
        return cls(arr.ravel(), int(width), int(height), num_labels)

    @classmethod
    def densified(cls, values, width, height):
        """Remap arbitrary integer values to 0..C-1 in increasing value order."""
        uniq, dense = np.unique(np.ravel(values), return_inverse=True)
        return cls(dense, width, height, len(uniq), tuple(int(v) for v in uniq))

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def shape(self):
        return (self.height, self.width)

    def grid(self) -> np.ndarray:
        return self.labels.reshape(self.height, self.width)

    def relabeled(self, labels, num_labels=-1) -> "Segmentation":
        return Segmentation(labels, self.width, self.height, num_labels)

    def __eq__(self, other):
        if not isinstance(other, Segmentation):
            return NotImplemented
        return (self.width, self.height) == (other.width, other.height) and np.array_equal(
            self.labels, other.labels
        )

    def __hash__(self):
        return hash((self.width, self.height, self.labels.tobytes()))

    def __repr__(self):
        return f"Segmentation({self.width}x{self.height}, C={self.num_labels})"


@dataclass(frozen=True)
class Ensemble:
    members: tuple
    provenance: tuple = ()

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("an ensemble needs at least one member")
        shape = members[0].shape
        for s in members[1:]:
            if s.shape != shape:
                raise DimensionMismatch(f"member grid {s.shape} differs from {shape}")
        prov = tuple(self.provenance) or tuple(f"member{i}" for i in range(len(members)))
        if len(prov) != len(members):
            raise ValueError("one provenance tag per member is required")
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "provenance", prov)

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, i):
        return self.members[i]

    @property
    def width(self):
        return self.members[0].width

    @property
    def height(self):
        return self.members[0].height

    @property
    def n(self):
        return self.members[0].n


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    counts: np.ndarray
    row_sums: np.ndarray = field(init=False)
    col_sums: np.ndarray = field(init=False)
    total: int = field(init=False)

    def __post_init__(self):
        counts = _frozen(self.counts)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "row_sums", _frozen(counts.sum(axis=1)))
        object.__setattr__(self, "col_sums", _frozen(counts.sum(axis=0)))
        object.__setattr__(self, "total", int(counts.sum()))

    def transpose(self) -> "ContingencyTable":
        return ContingencyTable(self.counts.T)


def _check_same_grid(a: Segmentation, b: Segmentation):
    if a.n != b.n:
        raise DimensionMismatch(f"segmentations have {a.n} and {b.n} pixels")


def joint_counts(a_labels, b_labels, ca: int, cb: int) -> np.ndarray:
    return np.bincount(a_labels * cb + b_labels, minlength=ca * cb).reshape(ca, cb)


def contingency(a: Segmentation, b: Segmentation) -> ContingencyTable:
    _check_same_grid(a, b)
    return ContingencyTable(joint_counts(a.labels, b.labels, a.num_labels, b.num_labels))


def _normalize_pairs(pairs) -> np.ndarray:
    arr = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    arr = arr.reshape(-1, 2)
    if np.any(arr < 0):
        raise ValueError("pixel indices must be non-negative")
    if np.any(arr[:, 0] == arr[:, 1]):
        bad = arr[arr[:, 0] == arr[:, 1]][0]
        raise ValueError(f"constraint pair {tuple(bad)} links a pixel to itself")
    arr = np.sort(arr, axis=1)
    return np.unique(arr, axis=0)


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Must-link and cannot-link pixel pairs.

    Pairs are unordered, stored as rows ``(m, l)`` with ``m < l``, sorted
    and de-duplicated. Construction rejects overlap between the two sets
    and any cannot-link pair implied by must-link transitivity.
    """

    must_link: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))
    cannot_link: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))

    def __post_init__(self):
        ml = _normalize_pairs(self.must_link)
        cl = _normalize_pairs(self.cannot_link)
        ml.setflags(write=False)
        cl.setflags(write=False)
        object.__setattr__(self, "must_link", ml)
        object.__setattr__(self, "cannot_link", cl)
        if len(cl):
            comp = self.components(self.max_index + 1)
            clash = comp[cl[:, 0]] == comp[cl[:, 1]]
            if clash.any():
                raise InconsistentConstraints(cl[np.argmax(clash)])

    @classmethod
    def from_pairs(cls, must_link=(), cannot_link=()):
        return cls(_normalize_pairs(must_link), _normalize_pairs(cannot_link))

    @property
    def max_index(self) -> int:
        hi = -1
        for arr in (self.must_link, self.cannot_link):
            if len(arr):
                hi = max(hi, int(arr.max()))
        return hi

    def __len__(self):
        return len(self.must_link) + len(self.cannot_link)

    def is_empty(self) -> bool:
        return len(self) == 0

    def must_link_set(self) -> set:
        return {tuple(map(int, p)) for p in self.must_link}

    def cannot_link_set(self) -> set:
        return {tuple(map(int, p)) for p in self.cannot_link}

    def components(self, n: int) -> np.ndarray:
        """Must-link component id for each of ``n`` pixels.

        Ids are numbered by the smallest pixel index in each component, so
        with no must-links every pixel is its own component and id == index.
        """
        if self.max_index >= n:
            raise DimensionMismatch(f"constraint index {self.max_index} outside {n} pixels")
        ml = self.must_link
        graph = coo_matrix((np.ones(len(ml)), (ml[:, 0], ml[:, 1])), shape=(n, n))
        _, raw = connected_components(graph, directed=False)
        # renumber by first occurrence
        _, first = np.unique(raw, return_index=True)
        order = np.argsort(first)
        remap = np.empty_like(order)
        remap[order] = np.arange(len(order))
        return remap[raw]

    def check(self, n: int):
        if self.max_index >= n:
            raise DimensionMismatch(f"constraint index {self.max_index} outside {n} pixels")

    def satisfied_by(self, s: Segmentation) -> tuple[int, int]:
        """Count of (must-link, cannot-link) pairs that ``s`` violates."""
        lab = s.labels
        ml, cl = self.must_link, self.cannot_link
        bad_ml = int(np.count_nonzero(lab[ml[:, 0]] != lab[ml[:, 1]]))
        bad_cl = int(np.count_nonzero(lab[cl[:, 0]] == lab[cl[:, 1]]))
        return bad_ml, bad_cl


def close_constraints(raw: ConstraintSet) -> ConstraintSet:
    """Replace the must-link set by its transitive closure.

    Raises InconsistentConstraints when the closure contains a cannot-link
    pair. The closure is materialized pair by pair, so it is quadratic in
    the size of each must-link component.
    """
    ml = raw.must_link
    if len(ml) == 0:
        return ConstraintSet(ml, raw.cannot_link)
    nodes = np.unique(ml)
    n = int(nodes.max()) + 1
    comp = ConstraintSet(ml).components(max(n, raw.max_index + 1))
    for m, l in raw.cannot_link:
        if comp[m] == comp[l]:
            raise InconsistentConstraints((m, l))
    pairs = []
    order = np.argsort(comp[nodes], kind="stable")
    grouped = nodes[order]
    bounds = np.flatnonzero(np.diff(comp[grouped])) + 1
    for group in np.split(grouped, bounds):
        if len(group) < 2:
            continue
        i, j = np.triu_indices(len(group), k=1)
        pairs.append(np.stack([group[i], group[j]], axis=1))
    closed = np.concatenate(pairs) if pairs else np.zeros((0, 2), np.int64)
    return ConstraintSet(closed, raw.cannot_link)


@dataclass(frozen=True, eq=False)
class SoftConnectivity:
    """Implicit weighted-average connectivity over an ensemble.

    Entry ``(m, l)`` is ``sum_i w_i [s_i(m) == s_i(l)]``, overridden to 1
    for pixels in the same must-link component and to 0 for cannot-link
    pairs. Nothing of size N x N is ever stored.
    """

    ensemble: Ensemble
    weights: np.ndarray
    constraints: ConstraintSet = field(default_factory=ConstraintSet)
    component: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.ensemble),):
            raise ValueError(f"expected {len(self.ensemble)} weights, got shape {w.shape}")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        comp = self.constraints.components(self.ensemble.n)
        comp.setflags(write=False)
        object.__setattr__(self, "component", comp)

    @property
    def n(self):
        return self.ensemble.n

    def entry(self, m: int, l: int) -> float:
        n = self.n
        if not (0 <= m < n and 0 <= l < n):
            raise IndexError(f"pixel pair ({m}, {l}) outside {n} pixels")
        if m == l or self.component[m] == self.component[l]:
            return 1.0
        key = (min(m, l), max(m, l))
        cl = self.constraints.cannot_link
        if len(cl) and np.any((cl[:, 0] == key[0]) & (cl[:, 1] == key[1])):
            return 0.0
        return float(sum(w for w, s in zip(self.weights, self.ensemble) if s.labels[m] == s.labels[l]))

    def dense(self) -> np.ndarray:
        """Materialize the N x N matrix; only for small grids and tests."""
        p = np.zeros((self.n, self.n))
        for w, s in zip(self.weights, self.ensemble):
            p += w * (s.labels[:, None] == s.labels[None, :])
        p[self.component[:, None] == self.component[None, :]] = 1.0
        cl = self.constraints.cannot_link
        p[cl[:, 0], cl[:, 1]] = 0.0
        p[cl[:, 1], cl[:, 0]] = 0.0
        return p
