"""Characterization fits: OLS wear/retention rows, distribution fits,
divergence reporting, and empirical optimal read voltages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .models import WearRow
from .voltage import STATES, VrefTriple

__all__ = [
    "OlsRankError",
    "OlsFit",
    "ols_fit",
    "ols_fit_pec_only",
    "gaussian_fit",
    "gamma_fit",
    "KlResult",
    "kl_divergence",
    "VoptEstimate",
    "empirical_vopt",
    "analytic_vopt",
]


class OlsRankError(ValueError):
    """Raised when the design matrix cannot identify all coefficients."""


@dataclass(frozen=True)
class OlsFit:
    """Fitted wear/retention row with uncertainty and fit quality.

    Coefficients follow the row convention:
    value = (alpha*pec + beta)*ln(t) + gamma*pec + delta.
    """

    alpha: float
    beta: float
    gamma: float
    delta: float
    std_errors: tuple[float, float, float, float]
    r2: float
    adj_r2: float
    n_samples: int

    def as_row(self) -> WearRow:
        return WearRow(self.alpha, self.beta, self.gamma, self.delta, adj_r2=self.adj_r2)

    def predict(self, pec, t_s):
        log_t = np.log(np.asarray(t_s, dtype=float))
        return (self.alpha * pec + self.beta) * log_t + self.gamma * pec + self.delta


def _check_rank_inputs(pec: np.ndarray, t_s: np.ndarray, need_t: bool) -> None:
    if np.unique(pec).size < 2:
        raise OlsRankError("design is rank deficient: need at least two distinct pec values")
    if need_t and np.unique(t_s).size < 2:
        raise OlsRankError("design is rank deficient: need at least two distinct retention times")


def ols_fit(pec, t_s, values) -> OlsFit:
    """Least-squares fit of value = (a*pec + b)*ln(t) + g*pec + d.

    Regressors are [pec*ln t, ln t, pec, 1]. Uses an SVD-backed solver;
    raises OlsRankError when pec or t lack the spread to identify the
    interaction terms.
    """
    pec = np.asarray(pec, dtype=float)
    t_s = np.asarray(t_s, dtype=float)
    y = np.asarray(values, dtype=float)
    if not (pec.shape == t_s.shape == y.shape) or pec.ndim != 1:
        raise ValueError("pec, t_s and values must be 1-d arrays of equal length")
    n = pec.size
    if n < 5:
        raise ValueError("need at least 5 samples to fit 4 coefficients")
    _check_rank_inputs(pec, t_s, need_t=True)
    log_t = np.log(t_s)
    x = np.column_stack([pec * log_t, log_t, pec, np.ones(n)])
    coef, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    if rank < 4:
        raise OlsRankError(f"design is rank deficient (rank {rank} of 4)")
    resid = y - x @ coef
    rss = float(resid @ resid)
    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if tss == 0.0 else 1.0 - rss / tss
    dof = n - 4
    adj_r2 = 1.0 - (1.0 - r2) * (n - 1) / dof if dof > 0 else float("nan")
    sigma2 = rss / dof if dof > 0 else float("nan")
    cov = sigma2 * np.linalg.inv(x.T @ x)
    se = tuple(float(v) for v in np.sqrt(np.diag(cov)))
    a, b, g, d = (float(v) for v in coef)
    return OlsFit(a, b, g, d, se, r2, adj_r2, n)


def ols_fit_pec_only(pec, values) -> OlsFit:
    """Fit value = gamma*pec + delta (rows with no retention dependence)."""
    pec = np.asarray(pec, dtype=float)
    y = np.asarray(values, dtype=float)
    if pec.shape != y.shape or pec.ndim != 1:
        raise ValueError("pec and values must be 1-d arrays of equal length")
    n = pec.size
    if n < 3:
        raise ValueError("need at least 3 samples to fit 2 coefficients")
    _check_rank_inputs(pec, pec, need_t=False)
    x = np.column_stack([pec, np.ones(n)])
    coef, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    if rank < 2:
        raise OlsRankError(f"design is rank deficient (rank {rank} of 2)")
    resid = y - x @ coef
    rss = float(resid @ resid)
    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if tss == 0.0 else 1.0 - rss / tss
    dof = n - 2
    adj_r2 = 1.0 - (1.0 - r2) * (n - 1) / dof if dof > 0 else float("nan")
    sigma2 = rss / dof if dof > 0 else float("nan")
    cov = sigma2 * np.linalg.inv(x.T @ x)
    se = np.sqrt(np.diag(cov))
    return OlsFit(
        0.0, 0.0, float(coef[0]), float(coef[1]),
        (0.0, 0.0, float(se[0]), float(se[1])),
        r2, adj_r2, n,
    )


def gaussian_fit(samples) -> tuple[float, float]:
    """Sample mean and unbiased stdev."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValueError("need at least 2 samples")
    return float(x.mean()), float(x.std(ddof=1))


def gamma_fit(samples) -> tuple[float, float]:
    """Method-of-moments gamma fit: shape = mean^2/var, scale = var/mean."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValueError("need at least 2 samples")
    if np.any(x < 0.0):
        raise ValueError("gamma samples must be nonnegative")
    mean = float(x.mean())
    var = float(x.var(ddof=1))
    if mean <= 0.0 or var <= 0.0:
        raise ValueError("degenerate samples: mean and variance must be positive")
    return mean * mean / var, var / mean


@dataclass(frozen=True)
class KlResult:
    nats: float
    disjoint_support: bool  # some observed bin had zero model mass


def kl_divergence(counts, bin_edges, pdf, quad_points: int = 32) -> KlResult:
    """KL divergence (nats) of a histogram from a model density.

    p is the normalized histogram; q integrates the model pdf across each
    bin with fixed-order Gauss-Legendre quadrature. q is left unnormalized
    (mass outside the binned range simply counts against the model), which
    keeps the sum nonnegative. Bins where p > 0 but q == 0 make the
    divergence infinite; that is reported via disjoint_support rather than
    raised, since heavy-tailed fits legitimately hit it.
    """
    counts = np.asarray(counts, dtype=float)
    edges = np.asarray(bin_edges, dtype=float)
    if edges.ndim != 1 or edges.size != counts.size + 1:
        raise ValueError("bin_edges must have len(counts)+1 entries")
    if np.any(counts < 0) or counts.sum() <= 0:
        raise ValueError("counts must be nonnegative with positive total")
    if np.any(np.diff(edges) <= 0):
        raise ValueError("bin_edges must be strictly increasing")
    p = counts / counts.sum()

    nodes, weights = np.polynomial.legendre.leggauss(quad_points)
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    # (bins, quad_points) evaluation grid.
    xs = mid[:, None] + half[:, None] * nodes[None, :]
    q = np.clip((np.asarray(pdf(xs)) * weights[None, :]).sum(axis=1) * half, 0.0, None)

    nats = 0.0
    disjoint = False
    for pi, qi in zip(p, q):
        if pi == 0.0:
            continue
        if qi <= 0.0:
            disjoint = True
            nats = float("inf")
            break
        nats += pi * math.log(pi / qi)
    return KlResult(nats=nats, disjoint_support=disjoint)


@dataclass(frozen=True)
class VoptEstimate:
    vrefs: VrefTriple
    degenerate: tuple[bool, bool, bool]  # per boundary: a side had no cells


def _boundary_argmin(errors: np.ndarray, grid: np.ndarray) -> float:
    """Grid value minimizing errors; ties resolve to the plateau midpoint."""
    best = errors.min()
    idx = np.flatnonzero(errors == best)
    return float(grid[idx[idx.size // 2]])


def empirical_vopt(vth, true_states, grid) -> VoptEstimate:
    """Per-boundary optimal read references from characterization data.

    For each adjacent state pair, counts misreads at every candidate
    reference on the grid (left-state cells at or above the candidate plus
    right-state cells below it) and takes the argmin; ties break to the
    midpoint of the tying plateau. A boundary with an empty side is flagged
    degenerate and falls back to the grid midpoint.
    """
    vth = np.asarray(vth, dtype=float)
    true_states = np.asarray(true_states)
    grid = np.asarray(grid, dtype=float)
    if vth.shape != true_states.shape or vth.ndim != 1:
        raise ValueError("vth and true_states must be 1-d arrays of equal length")
    refs = []
    degenerate = []
    for left in (0, 1, 2):
        lv = np.sort(vth[true_states == left])
        rv = np.sort(vth[true_states == left + 1])
        if lv.size == 0 or rv.size == 0:
            refs.append(float(grid[grid.size // 2]))
            degenerate.append(True)
            continue
        # left misread when vth >= candidate; right misread when vth < candidate
        errs = (lv.size - np.searchsorted(lv, grid, side="left")) + np.searchsorted(
            rv, grid, side="left"
        )
        refs.append(_boundary_argmin(errs, grid))
        degenerate.append(False)
    refs = _ensure_ordered(refs, grid)
    return VoptEstimate(vrefs=VrefTriple(*refs), degenerate=tuple(degenerate))


def analytic_vopt(dists, grid, priors=(0.25, 0.25, 0.25, 0.25)) -> VrefTriple:
    """Grid argmin of expected misreads per boundary for known distributions.

    dists may be a single set of four StateDistribution or a sequence of
    such sets (pooled with equal weight), which is how the block-level
    variation-agnostic reference over many layers is computed.
    """
    if hasattr(dists[0], "mean"):
        dist_sets = [tuple(dists)]
    else:
        dist_sets = [tuple(ds) for ds in dists]
    grid = np.asarray(grid, dtype=float)
    refs = []
    for left in (0, 1, 2):
        errs = np.zeros_like(grid)
        for ds in dist_sets:
            dl, dr = ds[left], ds[left + 1]
            # mass of the left state above the candidate + right state below
            errs += priors[left] * (1.0 - ndtr((grid - dl.mean) / dl.stdev))
            errs += priors[left + 1] * ndtr((grid - dr.mean) / dr.stdev)
        best = errs.min()
        idx = np.flatnonzero(errs <= best * (1.0 + 1e-12))
        refs.append(float(grid[idx[idx.size // 2]]))
    refs = _ensure_ordered(refs, grid)
    return VrefTriple(*refs)


def _ensure_ordered(refs: list[float], grid: np.ndarray) -> list[float]:
    """Nudge degenerate/tied boundaries apart so va < vb < vc holds."""
    step = float(grid[1] - grid[0]) if grid.size > 1 else 1.0
    out = [refs[0]]
    for r in refs[1:]:
        out.append(r if r > out[-1] else out[-1] + step)
    return out
