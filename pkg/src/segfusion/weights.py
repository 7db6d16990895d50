"""Member weights on the probability simplex.

Two subproblems are solved for a vector of member distances ``d``:

* quadratic: ``min d.w + lambda_q ||w||^2`` over the simplex, in closed form;
* sparse: ``min d.w + lambda ||w||_1`` over the simplex, by ADMM on the
  split ``w = z`` with the simplex indicator on ``w`` and the L1 term on
  ``z``.

On the simplex ``||w||_1 == 1``, so the L1 term only shifts the objective;
the soft-thresholded split variable ``z`` is kept as the sparsity pattern.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

SIMPLEX_TOL = 1e-9


class NonConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SolverConfig:
    lambda_: float | None = None  # None: half of the largest distance
    lambda_q: float = 1.0
    penalty: float = 1.0
    max_iter: int = 1000
    tol_primal: float = 1e-6
    tol_dual: float = 1e-6
    adapt: bool = True  # rescale the penalty to balance the residuals

    def __post_init__(self):
        if self.penalty <= 0:
            raise ValueError("ADMM penalty must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.tol_primal <= 0 or self.tol_dual <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class WeightSolution:
    w: np.ndarray
    z: np.ndarray | None = None
    objective: float = 0.0
    iterations: int = 0
    converged: bool = True
    primal_residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dual_residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))


def check_simplex(w, tol=SIMPLEX_TOL):
    w = np.asarray(w)
    if np.any(w < 0) or abs(w.sum() - 1.0) > tol:
        raise AssertionError(f"weights leave the simplex: sum={w.sum()!r}, min={w.min()!r}")


def simplex_project(v) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum w = 1}`` by sort and threshold."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ks > 0)[0][-1]
    w = np.maximum(v - css[rho] / (rho + 1), 0.0)
    # one renormalization absorbs cumsum rounding
    return w / w.sum()


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def solve_quadratic(d, cfg: SolverConfig = SolverConfig()) -> WeightSolution:
    d = np.asarray(d, dtype=float)
    if cfg.lambda_q <= 0:
        raise ValueError("lambda_q must be positive")
    w = simplex_project(-d / (2.0 * cfg.lambda_q))
    check_simplex(w)
    return WeightSolution(w, objective=float(d @ w + cfg.lambda_q * w @ w))


def resolve_lambda(d, cfg: SolverConfig) -> float:
    if cfg.lambda_ is not None:
        return float(cfg.lambda_)
    return 0.5 * float(np.max(d))


def solve_l1(d, cfg: SolverConfig = SolverConfig(), warn: bool = True) -> WeightSolution:
    d = np.asarray(d, dtype=float)
    k = d.size
    lam = resolve_lambda(d, cfg)
    # the argmin is invariant to a common positive scale of d and lambda
    scale = float(np.max(np.abs(d)))
    if scale <= 0:
        scale = 1.0
    dn, lam_n, theta = d / scale, lam / scale, cfg.penalty

    w = np.full(k, 1.0 / k)
    z = w.copy()
    u = np.zeros(k)
    r_hist, s_hist = [], []
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        w = simplex_project(z - u - dn / theta)
        z_old = z
        z = soft_threshold(w + u, lam_n / theta)
        u = u + w - z
        r = float(np.linalg.norm(w - z))
        s = float(theta * np.linalg.norm(z - z_old))
        r_hist.append(r)
        s_hist.append(s)
        if r < cfg.tol_primal and s < cfg.tol_dual:
            converged = True
            break
        # residual balancing; frozen for the second half of the budget
        if cfg.adapt and it <= cfg.max_iter // 2:
            if r > 10.0 * s:
                theta, u = theta * 2.0, u / 2.0
            elif s > 10.0 * r:
                theta, u = theta / 2.0, u * 2.0
    check_simplex(w)
    if not converged and warn:
        warnings.warn(
            f"ADMM stopped after {it} iterations (primal {r_hist[-1]:.3g}, dual {s_hist[-1]:.3g})",
            NonConvergenceWarning,
            stacklevel=2,
        )
    return WeightSolution(
        w,
        z,
        float(d @ w + lam * np.abs(w).sum()),
        it,
        converged,
        np.asarray(r_hist),
        np.asarray(s_hist),
    )
