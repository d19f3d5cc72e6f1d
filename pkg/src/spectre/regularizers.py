"""Nonsmooth penalties and their proximal maps.

Two families are implemented:

* low-rank penalties on a third-order tensor — a weighted sum of nuclear
  norms of the three unfoldings (``tnn1_*``), and the nuclear norm of
  the block-circulant matrix the tensor generates (``tnn2_*``), which is
  evaluated and shrunk slice-wise in the mode-3 Fourier domain;

* isotropic total variation with forward differences, in 2D and 3D.
  All difference indices stop one short of the end in every summed
  direction, so images with a singleton dimension have zero measured
  variation.  The proximal map is solved in the dual with a monotone
  accelerated projected-gradient scheme.
"""

from __future__ import annotations

import numpy as np

from .tensor3 import unfold

__all__ = [
    "sv_shrink",
    "tnn1_value",
    "tnn2_value",
    "tnn2_prox",
    "tv2d_value",
    "tv3d_value",
    "tv2d_prox",
    "tv3d_prox",
]


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not np.isfinite(tau) or tau < 0:
        raise ValueError(f"threshold must be finite and >= 0, got {tau}")
    return tau


def sv_shrink(z: np.ndarray, tau: float) -> np.ndarray:
    """Soft-threshold the singular values of a matrix by ``tau``.

    This is the proximal map of ``tau * nuclear norm`` at ``z``; it
    works for real and complex matrices alike.
    """
    tau = _check_tau(tau)
    z = np.asarray(z)
    if z.ndim != 2:
        raise ValueError("sv_shrink expects a matrix")
    u, s, vh = np.linalg.svd(z, full_matrices=False)
    return (u * np.maximum(s - tau, 0.0)) @ vh


def tnn1_value(x: np.ndarray, gammas) -> float:
    """Weighted sum of nuclear norms of the three unfoldings of ``x``."""
    gammas = np.asarray(gammas, dtype=float)
    if gammas.shape != (3,):
        raise ValueError("gammas must have length 3")
    total = 0.0
    for mode in (1, 2, 3):
        g = gammas[mode - 1]
        if g != 0.0:
            total += g * np.linalg.svd(unfold(x, mode), compute_uv=False).sum()
    return float(total)


def tnn2_value(x: np.ndarray, gamma: float = 1.0) -> float:
    """``gamma`` times the nuclear norm of the block-circulant matrix of ``x``.

    Computed without materializing the matrix: the block-circulant is
    unitarily equivalent to the block diagonal of the mode-3 DFT slices,
    so its singular values are the union of the per-slice ones.
    """
    if gamma == 0.0:
        return 0.0
    xf = np.fft.fft(np.asarray(x), axis=2)
    total = 0.0
    for n in range(x.shape[2]):
        total += np.linalg.svd(xf[:, :, n], compute_uv=False).sum()
    return float(gamma * total)


def tnn2_prox(x: np.ndarray, tau: float) -> np.ndarray:
    """Shrink every mode-3 Fourier slice of ``x`` by ``N3 * tau``.

    The block-circulant of the result equals ``sv_shrink`` applied to
    the block-circulant of ``x`` with threshold ``N3 * tau``; the factor
    ``N3`` reflects that the block-circulant embedding scales squared
    Frobenius norms by ``N3``, so this is the proximal map of
    ``tau * tnn2_value`` in the plain tensor metric.
    """
    tau = _check_tau(tau)
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError("tnn2_prox expects a third-order tensor")
    n3 = x.shape[2]
    if tau == 0.0:
        return x.astype(float, copy=True)
    nb = n3 // 2 + 1
    xf = np.fft.rfft(x, axis=2)
    out = np.empty_like(xf)
    thr = n3 * tau
    for n in range(nb):
        block = xf[:, :, n]
        if n == 0 or (n3 % 2 == 0 and n == nb - 1):
            block = block.real  # real slices stay real through the shrinkage
        out[:, :, n] = sv_shrink(block, thr)
    return np.fft.irfft(out, n=n3, axis=2)


# ------------------------------------------------------------------ 2D TV


def _grad2(u: np.ndarray) -> np.ndarray:
    """Forward differences on the (N1-1, N2-1) interior grid, 2 components."""
    d = np.empty((u.shape[0] - 1, u.shape[1] - 1, 2))
    d[:, :, 0] = u[1:, :-1] - u[:-1, :-1]
    d[:, :, 1] = u[:-1, 1:] - u[:-1, :-1]
    return d


def _grad2_adj(p: np.ndarray, shape) -> np.ndarray:
    out = np.zeros(shape)
    p0, p1 = p[:, :, 0], p[:, :, 1]
    out[1:, :-1] += p0
    out[:-1, :-1] -= p0
    out[:-1, 1:] += p1
    out[:-1, :-1] -= p1
    return out


def tv2d_value(u: np.ndarray, alpha: float = 1.0) -> float:
    """Isotropic TV of an image: ``alpha * sum ||forward differences||_2``."""
    u = np.asarray(u)
    if u.ndim != 2:
        raise ValueError("tv2d_value expects a matrix")
    if min(u.shape) < 2 or alpha == 0.0:
        return 0.0
    d = _grad2(u)
    return float(alpha * np.sqrt((d * d).sum(axis=2)).sum())


def _dual_prox(v, tau, iters, grad, grad_adj, pshape, lip, return_trace):
    """Monotone accelerated projected gradient on the TV-prox dual.

    Minimizes ``h(p) = ||v - tau * grad_adj(p)||^2`` over pointwise unit
    balls; the primal solution is ``v - tau * grad_adj(p)``.  A candidate
    step is only accepted when it does not increase ``h``, so the traced
    objective is nonincreasing by construction.
    """
    p_best = np.zeros(pshape)
    p_prev = p_best
    q = p_best
    h_best = float((v * v).sum())
    t = 1.0
    step = 2.0 * tau / lip  # gradient of h times this equals (2/L) * scaled grad
    trace = [h_best]
    for _ in range(iters):
        resid = v - tau * grad_adj(q, v.shape)
        cand = q + step * grad(resid)
        norms = np.sqrt((cand * cand).sum(axis=-1, keepdims=True))
        cand /= np.maximum(norms, 1.0)
        r = v - tau * grad_adj(cand, v.shape)
        h_cand = float((r * r).sum())
        if h_cand <= h_best:
            p_new, h_new = cand, h_cand
        else:
            p_new, h_new = p_best, h_best
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        q = p_new + (t / t_next) * (cand - p_new) + ((t - 1.0) / t_next) * (
            p_new - p_prev
        )
        p_prev, p_best, h_best, t = p_new, p_new, h_new, t_next
        trace.append(h_best)
    out = v - tau * grad_adj(p_best, v.shape)
    if return_trace:
        return out, np.asarray(trace)
    return out


def tv2d_prox(v: np.ndarray, tau: float, iters: int = 20, return_trace: bool = False):
    """Proximal map of ``tau * tv2d_value`` at image ``v``.

    Runs ``iters`` dual projected-gradient steps; with ``return_trace``
    the (nonincreasing) dual objective values are returned as well.
    """
    tau = _check_tau(tau)
    v = np.asarray(v, dtype=float)
    if v.ndim != 2:
        raise ValueError("tv2d_prox expects a matrix")
    if tau == 0.0 or min(v.shape) < 2:
        return (v.copy(), np.zeros(1)) if return_trace else v.copy()
    pshape = (v.shape[0] - 1, v.shape[1] - 1, 2)
    # ||grad||^2 <= 8: two forward-difference operators of norm^2 <= 4
    lip = 2.0 * tau * tau * 8.0
    return _dual_prox(v, tau, iters, _grad2, _grad2_adj, pshape, lip, return_trace)


# ------------------------------------------------------------------ 3D TV


def _grad3_factory(weights):
    w1, w2, w3 = weights

    def grad(u):
        d = np.empty((u.shape[0] - 1, u.shape[1] - 1, u.shape[2] - 1, 3))
        d[..., 0] = w1 * (u[1:, :-1, :-1] - u[:-1, :-1, :-1])
        d[..., 1] = w2 * (u[:-1, 1:, :-1] - u[:-1, :-1, :-1])
        d[..., 2] = w3 * (u[:-1, :-1, 1:] - u[:-1, :-1, :-1])
        return d

    def grad_adj(p, shape):
        out = np.zeros(shape)
        p0 = w1 * p[..., 0]
        p1 = w2 * p[..., 1]
        p2 = w3 * p[..., 2]
        out[1:, :-1, :-1] += p0
        out[:-1, :-1, :-1] -= p0
        out[:-1, 1:, :-1] += p1
        out[:-1, :-1, :-1] -= p1
        out[:-1, :-1, 1:] += p2
        out[:-1, :-1, :-1] -= p2
        return out

    return grad, grad_adj


def tv3d_value(x: np.ndarray, alpha: float = 1.0, weights=(1.0, 1.0, 1.0)) -> float:
    """Isotropic 3-component TV of a third-order tensor.

    ``weights`` scales the three difference directions; the default is
    the fully isotropic penalty.
    """
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError("tv3d_value expects a third-order tensor")
    if min(x.shape) < 2 or alpha == 0.0:
        return 0.0
    grad, _ = _grad3_factory(weights)
    d = grad(x)
    return float(alpha * np.sqrt((d * d).sum(axis=-1)).sum())


def tv3d_prox(
    x: np.ndarray,
    tau: float,
    iters: int = 20,
    weights=(1.0, 1.0, 1.0),
    return_trace: bool = False,
):
    """Proximal map of ``tau * tv3d_value`` at tensor ``x``."""
    tau = _check_tau(tau)
    x = np.asarray(x, dtype=float)
    if x.ndim != 3:
        raise ValueError("tv3d_prox expects a third-order tensor")
    if tau == 0.0 or min(x.shape) < 2:
        return (x.copy(), np.zeros(1)) if return_trace else x.copy()
    grad, grad_adj = _grad3_factory(weights)
    pshape = (x.shape[0] - 1, x.shape[1] - 1, x.shape[2] - 1, 3)
    lip = 2.0 * tau * tau * 4.0 * float(sum(w * w for w in weights))
    return _dual_prox(x, tau, iters, grad, grad_adj, pshape, lip, return_trace)
