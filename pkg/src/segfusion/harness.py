"""Experiment protocol: train/test evaluation and (C_hat, beta) grid search."""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .core import Ensemble, Segmentation
from .dataio import DatasetSplit, constraints_from_ground_truth
from .fusion import SSSF, USF, FusionConfig, fuse_sssf, fuse_usf
from .metrics import adjusted_rand_index, evaluate
from .segmenters import MultiBandImage, band_ensemble

BETA_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99)
C_GRID = tuple(range(2, 11))
METRICS = ("RI", "ARI", "AMI")


def derive_seeds(seed: int, count: int) -> list[int]:
    return [int(v) for v in np.random.SeedSequence(seed).generate_state(count)]


def average_scores(members, truth: Segmentation) -> dict:
    scores = [evaluate(s, truth) for s in members]
    return {m: float(np.mean([sc[m] for sc in scores])) for m in METRICS}


@dataclass
class ProtocolResult:
    scores: dict  # method -> {"Tr": {...}, "Te": {...}}
    weights: np.ndarray
    train_constraints: int


def run_protocol(split: DatasetSplit, k: int, fraction: float, cfg: FusionConfig,
                 seed: int = 0, n_init: int = 1) -> ProtocolResult:
    """Base members, USF and SSSF on both halves of a split.

    Constraints are sampled from the training ground truth only; the test
    half reuses the weights learned on the training half.
    """
    (tr_img, tr_gt), (te_img, te_gt) = split.train, split.test
    s_seg, s_cons = derive_seeds(seed, 2)
    seg_seeds = derive_seeds(s_seg, tr_img.num_bands)
    ens_tr = band_ensemble(tr_img, k, seg_seeds, n_init=n_init)
    ens_te = band_ensemble(te_img, k, seg_seeds, n_init=n_init)
    cons = constraints_from_ground_truth(tr_gt, fraction, s_cons)

    scores = {"Average Base": {}, "USF": {}, "SSSF": {}}
    scores["Average Base"]["Tr"] = average_scores(ens_tr, tr_gt)
    scores["Average Base"]["Te"] = average_scores(ens_te, te_gt)
    scores["USF"]["Tr"] = evaluate(fuse_usf(ens_tr, cfg).segmentation, tr_gt)
    scores["USF"]["Te"] = evaluate(fuse_usf(ens_te, cfg).segmentation, te_gt)

    trained = fuse_sssf(ens_tr, cons, replace(cfg, mode=SSSF, fixed_weights=None))
    scores["SSSF"]["Tr"] = evaluate(trained.segmentation, tr_gt)
    tested = fuse_sssf(ens_te, None, replace(cfg, mode=SSSF, fixed_weights=tuple(trained.weights)))
    scores["SSSF"]["Te"] = evaluate(tested.segmentation, te_gt)
    return ProtocolResult(scores, trained.weights, len(cons))


def _grid_point(args):
    ens, truth, c, beta, cfg, mode = args
    cfg = replace(cfg, C_hat=c, beta=beta, mode=mode)
    out = fuse_usf(ens, cfg) if mode == USF else fuse_sssf(ens, None, cfg)
    return adjusted_rand_index(out.segmentation, truth)


def param_search(img: MultiBandImage, truth: Segmentation, cfg: FusionConfig,
                 c_grid=C_GRID, beta_grid=BETA_GRID, k: int | None = None,
                 per_band: bool = True, mode: str = USF, jobs: int = 1):
    """Grid search over (C_hat, beta) maximizing training ARI.

    Members are segmented with ``k = c`` at each grid value unless ``k`` is
    fixed. Ties go to the first grid point in (c, beta) order. Returns the
    best pair and the full grid as ``(c, beta, ARI)`` rows.
    """
    seeds = derive_seeds(cfg.seed, img.num_bands if per_band else 1)
    ensembles = {}
    for c in c_grid:
        kk = k or c
        if kk not in ensembles:
            if per_band:
                ensembles[kk] = band_ensemble(img, kk, seeds)
            else:
                from .segmenters import kmeans_segment
                ensembles[kk] = Ensemble((kmeans_segment(img, kk, seeds[0]),))
    points = list(itertools.product(c_grid, beta_grid))
    run_seeds = derive_seeds(cfg.seed + 1, len(points))
    tasks = [
        (ensembles[k or c], truth, c, beta, replace(cfg, seed=s), mode)
        for (c, beta), s in zip(points, run_seeds)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            aris = list(pool.map(_grid_point, tasks))
    else:
        aris = [_grid_point(t) for t in tasks]
    rows = [(c, beta, ari) for (c, beta), ari in zip(points, aris)]
    best = max(range(len(rows)), key=lambda i: (rows[i][2], -i))
    return (rows[best][0], rows[best][1]), rows
