"""Exact t-SNE (O(m^2), no tree approximation) for embedding fused features.

Standard recipe: per-point Gaussian bandwidths calibrated by bisection so each
row of the conditional affinity matrix has entropy log(perplexity); symmetrized
joint affinities; Student-t low-dimensional kernel; gradient descent with
momentum 0.5 switching to 0.8 and early exaggeration of the attractive forces
for the first iterations. Deterministic per seed. Intended for the <= ~1000
point datasets produced here; the quadratic memory is the simple choice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TsneConfig
from .errors import PerplexityTooLarge, ShapeMismatch

_P_MIN = 1e-12


@dataclass
class TsneResult:
    coords: np.ndarray        # (m, 2)
    kl: float                 # KL(P || Q) at the final iteration
    kl_initial: float         # KL right after exaggeration is lifted
    iterations: int
    calibration_error: float  # worst |entropy - log(perplexity)| over points


def pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances with an exactly zero diagonal."""
    x = np.asarray(x, dtype=np.float64)
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _row_affinities(d_row: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    """Shannon entropy (nats) and normalized affinities for one point at
    precision ``beta`` = 1/(2 sigma^2); the point itself is excluded upstream."""
    logits = -d_row * beta
    logits -= logits.max()
    p = np.exp(logits)
    total = p.sum()
    p /= total
    # H = -sum p log p, computed stably from the shifted logits
    h = -np.sum(p * (logits - np.log(total)))
    return float(h), p


def calibrate_affinities(
    dists: np.ndarray,
    perplexity: float,
    tol: float = 1e-5,
    max_iter: int = 200,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Per-point precision search so each conditional row hits the target
    entropy. Returns (conditional P with zero diagonal, betas, worst entropy
    error). Degenerate rows (all-equal distances) stop at max_iter with the
    uniform distribution, which is the fixed point regardless of beta."""
    m = dists.shape[0]
    target = np.log(perplexity)
    p_cond = np.zeros((m, m), dtype=np.float64)
    betas = np.ones(m, dtype=np.float64)
    worst = 0.0
    others = np.arange(m)
    for i in range(m):
        idx = others[others != i]
        d_row = dists[i, idx]
        beta, lo, hi = 1.0, 0.0, np.inf
        h, p = _row_affinities(d_row, beta)
        for _ in range(max_iter):
            if abs(h - target) < tol:
                break
            if h > target:          # entropy too high -> sharpen
                lo = beta
                beta = beta * 2.0 if np.isinf(hi) else (beta + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == 0.0 else (beta + lo) / 2.0
            h, p = _row_affinities(d_row, beta)
        betas[i] = beta
        worst = max(worst, abs(h - target))
        p_cond[i, idx] = p
    return p_cond, betas, worst


def joint_affinities(p_cond: np.ndarray) -> np.ndarray:
    m = p_cond.shape[0]
    p = (p_cond + p_cond.T) / (2.0 * m)
    return np.maximum(p, _P_MIN)


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    mask = ~np.eye(p.shape[0], dtype=bool)
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def tsne(points: np.ndarray, cfg: TsneConfig | None = None) -> TsneResult:
    cfg = cfg or TsneConfig()
    cfg.validate()
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ShapeMismatch(f"t-SNE expects an m x D matrix with D >= 2, got {x.shape}")
    m = x.shape[0]
    if m > 5000:
        raise ShapeMismatch("exact t-SNE is limited to 5000 points")
    if cfg.perplexity >= (m - 1) / 3:
        raise PerplexityTooLarge(
            f"perplexity {cfg.perplexity} requires more than {3 * cfg.perplexity + 1:.0f} points")

    p_cond, _, calib_err = calibrate_affinities(pairwise_sq_dists(x), cfg.perplexity)
    p = joint_affinities(p_cond)

    rng = np.random.default_rng(cfg.seed)
    y = rng.standard_normal((m, 2)) * 1e-4
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    p_run = p * cfg.early_exaggeration
    kl_initial = float("nan")

    for it in range(cfg.iterations):
        if it == cfg.exaggeration_iters:
            p_run = p
            kl_initial = _kl(p, _student_q(y)[0])
        q, num = _student_q(y)
        pq = (p_run - q) * num
        grad = 4.0 * (np.diag(pq.sum(axis=1)) - pq) @ y
        momentum = 0.5 if it < cfg.exaggeration_iters else 0.8
        same_sign = np.sign(grad) == np.sign(update)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        update = momentum * update - cfg.learning_rate * gains * grad
        y = y + update
        y = y - y.mean(axis=0)

    kl_final = _kl(p, _student_q(y)[0])
    if np.isnan(kl_initial):  # iterations == exaggeration_iters edge case
        kl_initial = kl_final
    return TsneResult(coords=y, kl=kl_final, kl_initial=kl_initial,
                      iterations=cfg.iterations, calibration_error=calib_err)


def _student_q(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Student-t joint affinities of the embedding and the unnormalized kernel."""
    num = 1.0 / (1.0 + pairwise_sq_dists(y))
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / num.sum(), _P_MIN)
    return q, num
