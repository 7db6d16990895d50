"""Built-in base-layer segmenter: Lloyd k-means on per-pixel band values."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DimensionMismatch, Ensemble, Segmentation


@dataclass(frozen=True, eq=False)
class MultiBandImage:
    bands: np.ndarray  # (J, height, width)
    band_names: tuple = field(default=())

    def __post_init__(self):
        bands = np.asarray(self.bands, dtype=float)
        if bands.ndim == 2:
            bands = bands[None]
        if bands.ndim != 3 or bands.shape[0] < 1:
            raise DimensionMismatch("expected a (bands, height, width) array")
        bands = bands.copy()
        bands.setflags(write=False)
        object.__setattr__(self, "bands", bands)
        names = tuple(self.band_names) or tuple(f"band{j}" for j in range(bands.shape[0]))
        if len(names) != bands.shape[0]:
            raise ValueError("one name per band is required")
        object.__setattr__(self, "band_names", names)

    @property
    def num_bands(self):
        return self.bands.shape[0]

    @property
    def height(self):
        return self.bands.shape[1]

    @property
    def width(self):
        return self.bands.shape[2]

    def features(self, zscore=False) -> np.ndarray:
        """(N, J) matrix of band values, row-major pixel order."""
        x = self.bands.reshape(self.num_bands, -1).T.copy()
        if zscore:
            sd = x.std(axis=0)
            x = (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
        return x

    def subset(self, rows=None, mask=None) -> "MultiBandImage":
        if mask is not None:
            flat = self.bands.reshape(self.num_bands, -1)[:, np.ravel(mask)]
            return MultiBandImage(flat[:, None, :], self.band_names)
        return MultiBandImage(self.bands[:, rows[0]:rows[1], :], self.band_names)


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: list  # within-cluster sum of squares after every iteration


def _plusplus(x, k, rng):
    """Greedy k-means++: of a few D^2-sampled candidates, keep the best one."""
    n = len(x)
    trials = 2 + int(np.log(k))
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
            centers.append(x[idx])
            continue
        cand = rng.choice(n, size=trials, p=d2 / total)
        pots = [np.minimum(d2, ((x - x[c]) ** 2).sum(axis=1)) for c in cand]
        best = int(np.argmin([p.sum() for p in pots]))
        centers.append(x[cand[best]])
        d2 = pots[best]
    return np.array(centers, dtype=float)


def _sq_dist(x, centers):
    return ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def kmeans(x, k: int, seed: int = 0, max_iter: int = 100, n_init: int = 1) -> KMeansResult:
    """Lloyd iterations from k-means++ seeding.

    An emptied cluster is reseeded at the point farthest from its assigned
    center. Labels are returned dense: unpopulated clusters are dropped.
    With ``n_init > 1`` the run with the lowest final inertia is kept
    (first one on ties).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if k < 1 or max_iter < 1 or n_init < 1:
        raise ValueError("k, max_iter and n_init must be at least 1")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        res = _lloyd(x, k, rng, max_iter)
        if best is None or res.inertia[-1] < best.inertia[-1]:
            best = res
    return best


def _lloyd(x, k, rng, max_iter) -> KMeansResult:
    centers = _plusplus(x, k, rng)
    dist = _sq_dist(x, centers)
    labels = dist.argmin(axis=1)
    inertia = [float(dist[np.arange(len(x)), labels].sum())]
    for _ in range(max_iter):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        new = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], centers)
        own = ((x - new[labels]) ** 2).sum(axis=1)
        for j in np.flatnonzero(counts == 0):
            far = int(own.argmax())
            if own[far] <= 0:
                break
            new[j] = x[far]
            own[far] = 0.0
        dist = _sq_dist(x, new)
        new_labels = dist.argmin(axis=1)
        inertia.append(float(dist[np.arange(len(x)), new_labels].sum()))
        done = np.array_equal(new_labels, labels) and np.allclose(new, centers)
        centers, labels = new, new_labels
        if done:
            break
    used, dense = np.unique(labels, return_inverse=True)
    return KMeansResult(dense, centers[used], inertia)


def kmeans_segment(img: MultiBandImage, k: int, seed: int = 0, max_iter: int = 100,
                   zscore: bool = False, n_init: int = 1) -> Segmentation:
    res = kmeans(img.features(zscore), k, seed, max_iter, n_init)
    return Segmentation(res.labels, img.width, img.height)


def band_ensemble(img: MultiBandImage, k: int, seeds=(0,), max_iter: int = 100,
                  zscore: bool = False, n_init: int = 1) -> Ensemble:
    """One k-means run per band on that band's scalar values."""
    seeds = list(seeds)
    if len(seeds) == 1:
        seeds = seeds * img.num_bands
    if len(seeds) != img.num_bands:
        raise ValueError(f"need 1 or {img.num_bands} seeds, got {len(seeds)}")
    members, tags = [], []
    feats = img.features(zscore)
    for j, seed in enumerate(seeds):
        res = kmeans(feats[:, j], k, seed, max_iter, n_init)
        members.append(Segmentation(res.labels, img.width, img.height))
        tags.append(f"kmeans band={img.band_names[j]} k={k} seed={seed}")
    return Ensemble(tuple(members), tuple(tags))
