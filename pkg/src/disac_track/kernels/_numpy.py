"""Vectorised numpy implementations of the hot kernels.

These are the reference path and the fallback when numba is unavailable or
disabled via ``DISAC_TRACK_BACKEND=numpy``.
"""

from __future__ import annotations

import math

import numpy as np

EPS = 1e-9


def _batched_cholesky(S: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    # slow path: regularise only the offending matrices
    flat = S.reshape(-1, S.shape[-2], S.shape[-1]).copy()
    eye = np.eye(S.shape[-1])
    out = np.zeros_like(flat)
    for k in range(flat.shape[0]):
        try:
            out[k] = np.linalg.cholesky(flat[k])
        except np.linalg.LinAlgError:
            try:
                out[k] = np.linalg.cholesky(flat[k] + EPS * eye)
            except np.linalg.LinAlgError:
                out[k] = np.nan
    return out.reshape(S.shape)


def gm_update(w, m, P, z, R, p_d, lam):
    """Detection terms of the GM-PHD update.

    Returns weights ``(N, J)``, means ``(N, J, d)`` and covariances
    ``(N, J, d, d)`` for every (measurement, component) pair. The state's
    leading ``dz`` entries are the measured position.
    """
    J, d = m.shape
    N, dz = z.shape
    HP = P[:, :dz, :]  # (J, dz, d)
    S = P[None, :, :dz, :dz] + R[:, None, :, :]  # (N, J, dz, dz)
    L = _batched_cholesky(S)
    bad = np.isnan(L).any(axis=(-2, -1))
    if bad.any():
        L = np.where(bad[..., None, None], np.eye(dz), L)
    nu = z[:, None, :] - m[None, :, :dz]  # (N, J, dz)
    A = np.linalg.solve(L, np.broadcast_to(HP[None], (N, J, dz, d)))  # L^-1 H P
    y = np.linalg.solve(L, nu[..., None])[..., 0]  # L^-1 nu
    maha = np.einsum("nji,nji->nj", y, y)
    logdet_half = np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(axis=-1)
    q = np.exp(-0.5 * maha - logdet_half - 0.5 * dz * math.log(2.0 * math.pi))
    q = np.where(bad, 0.0, q)

    num = p_d * w[None, :] * q
    den = lam + num.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        w_new = np.where(den > 0, num / den, 0.0)

    m_new = m[None] + np.einsum("njki,njk->nji", A, y)
    P_new = P[None] - np.einsum("njki,njkl->njil", A, A)
    P_new = 0.5 * (P_new + np.swapaxes(P_new, -1, -2))
    return w_new, m_new, P_new


def _safe_inv(P: np.ndarray) -> np.ndarray:
    eye = np.eye(P.shape[-1])
    out = np.empty_like(P)
    for k in range(P.shape[0]):
        try:
            np.linalg.cholesky(P[k])
            out[k] = np.linalg.inv(P[k])
        except np.linalg.LinAlgError:
            out[k] = np.linalg.inv(P[k] + EPS * eye)
    return out


def merge_pass(w, m, P, threshold):
    """One greedy moment-matching merge pass.

    Components are visited in descending weight order (stable). Groups of a
    single component are copied unchanged. Returns ``(w, m, P, n_merged)``
    where ``n_merged`` counts components absorbed into another one.
    """
    J = w.shape[0]
    if J == 0:
        return w.copy(), m.copy(), P.copy(), 0
    order = np.argsort(-w, kind="stable")
    Pinv = _safe_inv(P)
    free = np.ones(J, dtype=bool)
    ws, ms, Ps = [], [], []
    absorbed = 0
    for i in order:
        if not free[i]:
            continue
        diff = m - m[i]
        maha = np.einsum("ji,jik,jk->j", diff, Pinv, diff)
        group = np.flatnonzero(free & (maha <= threshold))
        free[group] = False
        if group.size == 1:
            ws.append(w[i])
            ms.append(m[i].copy())
            Ps.append(P[i].copy())
            continue
        absorbed += group.size - 1
        wg = w[group]
        wsum = wg.sum()
        mean = (wg[:, None] * m[group]).sum(axis=0) / wsum
        dm = m[group] - mean
        cov = (wg[:, None, None] * (P[group] + dm[:, :, None] * dm[:, None, :])).sum(axis=0) / wsum
        ws.append(wsum)
        ms.append(mean)
        Ps.append(0.5 * (cov + cov.T))
    return np.array(ws), np.array(ms), np.array(Ps), absorbed


def greedy_partition(z, gate):
    """Centroid-gated greedy agglomeration in row order.

    Each point joins the nearest existing cluster for which every member
    (including the point) stays within ``gate`` of the updated centroid;
    otherwise it opens a new cluster. Returns integer labels.
    """
    n = z.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    sums = np.zeros((n, z.shape[1]))
    counts = np.zeros(n, dtype=np.int64)
    k = 0
    for i in range(n):
        if k:
            cent = sums[:k] / counts[:k, None]
            dist = np.linalg.norm(cent - z[i], axis=1)
            near = np.flatnonzero(dist <= 2.0 * gate)
            for c in near[np.argsort(dist[near], kind="stable")]:
                new_cent = (sums[c] + z[i]) / (counts[c] + 1)
                members = z[:i][labels[:i] == c]
                if np.linalg.norm(z[i] - new_cent) <= gate and np.all(
                    np.linalg.norm(members - new_cent, axis=1) <= gate
                ):
                    labels[i] = c
                    sums[c] += z[i]
                    counts[c] += 1
                    break
        if labels[i] < 0:
            labels[i] = k
            sums[k] = z[i]
            counts[k] = 1
            k += 1
    return labels


def psd_factor(A, tol):
    """Pivot-tolerant lower Cholesky of a stack of symmetric PSD matrices.

    Pivots at or below ``tol`` times their diagonal give zero columns.
    Returns ``(L, ok)``; ``ok`` is False if any matrix is indefinite.
    """
    n, d, _ = A.shape
    diag = np.diagonal(A, axis1=1, axis2=2)
    L = np.zeros_like(A)
    for j in range(d):
        piv = A[:, j, j] - np.einsum("nk,nk->n", L[:, j, :j], L[:, j, :j])
        floor = tol * A[:, j, j]
        if np.any(piv < -floor):
            return L, False
        pos = piv > floor
        root = np.sqrt(np.where(pos, piv, 1.0))
        L[:, j, j] = np.where(pos, root, 0.0)
        for i in range(j + 1, d):
            r = A[:, i, j] - np.einsum("nk,nk->n", L[:, i, :j], L[:, j, :j])
            scale = np.sqrt(np.abs(diag[:, i] * diag[:, j]))
            if np.any(~pos & (np.abs(r) > math.sqrt(tol) * scale + 1e-300)):
                return L, False
            L[:, i, j] = np.where(pos, r / root, 0.0)
    return L, True


def cubature_points(zt, L, positions, rotations, c):
    """Push the ``2d`` cubature points of each (delay, elevation, azimuth)
    measurement through the range-bearing-to-position map.

    Returns the point mean ``(n, 3)``, the centred second moment
    ``(n, 3, 3)`` and a ``(n, 2d)`` mask of points whose delay was clamped.
    """
    n, dz = zt.shape
    offsets = math.sqrt(dz) * np.swapaxes(L, 1, 2)  # row j = sqrt(d) * column j of L
    pts = np.concatenate([zt[:, None, :] + offsets, zt[:, None, :] - offsets], axis=1)
    tau = pts[..., 0]
    neg = tau < 0
    tau = np.where(neg, 0.0, tau)
    el = pts[..., 1]
    az = pts[..., 2]
    sin_el = np.sin(el)
    local = np.stack((np.cos(az) * sin_el, np.sin(az) * sin_el, np.cos(el)), axis=-1)
    u = positions[:, None, :] + (c * tau)[..., None] * np.einsum("nij,nkj->nki", rotations, local)
    z = u.mean(axis=1)
    du = u - z[:, None, :]
    w = np.einsum("nki,nkj->nij", du, du) / (2 * dz)
    return z, w, neg
