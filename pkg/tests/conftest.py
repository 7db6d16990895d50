import itertools

import numpy as np
import pytest

from segfusion import Segmentation


def seg(labels, width=None):
    return Segmentation.from_labels(labels, width)


def random_seg(rng, n, c, width=None):
    width = width or n
    return Segmentation(rng.integers(0, c, n), width, n // width)


def brute_pair_counts(a, b):
    """(n11, n10, n01, n00) by enumerating every unordered pixel pair."""
    n11 = n10 = n01 = n00 = 0
    la, lb = list(a.labels), list(b.labels)
    for m, l in itertools.combinations(range(len(la)), 2):
        x, y = la[m] == la[l], lb[m] == lb[l]
        if x and y:
            n11 += 1
        elif x:
            n10 += 1
        elif y:
            n01 += 1
        else:
            n00 += 1
    return n11, n10, n01, n00


def brute_sdd(a, b):
    _, n10, n01, _ = brute_pair_counts(a, b)
    return n10 + n01


def all_partitions(n, max_labels):
    """Every labeling of n items with at most max_labels labels, in canonical form."""
    out = []

    def grow(prefix, used):
        if len(prefix) == n:
            out.append(tuple(prefix))
            return
        for c in range(min(used + 1, max_labels)):
            grow(prefix + [c], max(used, c + 1))

    grow([], 0)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
