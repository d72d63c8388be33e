"""numba-compiled loop kernels; same contracts as :mod:`._numpy`."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

EPS = 1e-9


@njit(cache=True)
def _chol(S, out):
    """In-place lower Cholesky of ``S`` into ``out``; False on failure."""
    n = S.shape[0]
    for i in range(n):
        for j in range(i + 1):
            s = S[i, j]
            for k in range(j):
                s -= out[i, k] * out[j, k]
            if i == j:
                if s <= 0.0:
                    return False
                out[i, i] = math.sqrt(s)
            else:
                out[i, j] = s / out[j, j]
        for j in range(i + 1, n):
            out[i, j] = 0.0
    return True


@njit(cache=True)
def _forward(L, b, out):
    n = L.shape[0]
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * out[k]
        out[i] = s / L[i, i]


@njit(cache=True)
def gm_update(w, m, P, z, R, p_d, lam):
    J, d = m.shape
    N, dz = z.shape
    w_new = np.zeros((N, J))
    m_new = np.empty((N, J, d))
    P_new = np.empty((N, J, d, d))
    S = np.empty((dz, dz))
    L = np.empty((dz, dz))
    A = np.empty((dz, d))
    col = np.empty(dz)
    y = np.empty(dz)
    nu = np.empty(dz)
    log2pi = math.log(2.0 * math.pi)
    for n in range(N):
        for j in range(J):
            for a in range(dz):
                for b in range(dz):
                    S[a, b] = P[j, a, b] + R[n, a, b]
            ok = _chol(S, L)
            if not ok:
                for a in range(dz):
                    S[a, a] += EPS
                ok = _chol(S, L)
            if not ok:
                m_new[n, j] = m[j]
                P_new[n, j] = P[j]
                continue
            # A = L^-1 H P, column by column
            for c in range(d):
                for a in range(dz):
                    col[a] = P[j, a, c]
                _forward(L, col, y)
                for a in range(dz):
                    A[a, c] = y[a]
            for a in range(dz):
                nu[a] = z[n, a] - m[j, a]
            _forward(L, nu, y)
            maha = 0.0
            logdet_half = 0.0
            for a in range(dz):
                maha += y[a] * y[a]
                logdet_half += math.log(L[a, a])
            q = math.exp(-0.5 * maha - logdet_half - 0.5 * dz * log2pi)
            w_new[n, j] = p_d * w[j] * q
            for r in range(d):
                acc = m[j, r]
                for a in range(dz):
                    acc += A[a, r] * y[a]
                m_new[n, j, r] = acc
            for r in range(d):
                for c in range(r, d):
                    acc = 0.5 * (P[j, r, c] + P[j, c, r])
                    for a in range(dz):
                        acc -= A[a, r] * A[a, c]
                    P_new[n, j, r, c] = acc
                    P_new[n, j, c, r] = acc
        den = lam
        for j in range(J):
            den += w_new[n, j]
        for j in range(J):
            w_new[n, j] = w_new[n, j] / den if den > 0.0 else 0.0
    return w_new, m_new, P_new


@njit(cache=True)
def _inv_spd(P, out):
    d = P.shape[0]
    L = np.empty((d, d))
    Q = P.copy()
    if not _chol(Q, L):
        for a in range(d):
            Q[a, a] += EPS
        if not _chol(Q, L):
            out[:, :] = np.linalg.inv(Q)
            return
    e = np.zeros(d)
    y = np.empty(d)
    for c in range(d):
        e[:] = 0.0
        e[c] = 1.0
        _forward(L, e, y)
        # back substitution with L^T
        for i in range(d - 1, -1, -1):
            s = y[i]
            for k in range(i + 1, d):
                s -= L[k, i] * out[k, c]
            out[i, c] = s / L[i, i]


@njit(cache=True)
def merge_pass(w, m, P, threshold):
    J = w.shape[0]
    d = m.shape[1]
    w_out = np.empty(J)
    m_out = np.empty((J, d))
    P_out = np.empty((J, d, d))
    if J == 0:
        return w_out, m_out, P_out, 0
    order = np.argsort(-w, kind="mergesort")
    Pinv = np.empty((J, d, d))
    for j in range(J):
        _inv_spd(P[j], Pinv[j])
    free = np.ones(J, dtype=np.bool_)
    in_group = np.zeros(J, dtype=np.bool_)
    k = 0
    absorbed = 0
    for oi in range(J):
        i = order[oi]
        if not free[i]:
            continue
        size = 0
        for j in range(J):
            in_group[j] = False
            if not free[j]:
                continue
            maha = 0.0
            for a in range(d):
                da = m[j, a] - m[i, a]
                acc = 0.0
                for b in range(d):
                    acc += Pinv[j, a, b] * (m[j, b] - m[i, b])
                maha += da * acc
            if maha <= threshold:
                in_group[j] = True
                free[j] = False
                size += 1
        if size == 1:
            w_out[k] = w[i]
            m_out[k] = m[i]
            P_out[k] = P[i]
            k += 1
            continue
        absorbed += size - 1
        wsum = 0.0
        mean = np.zeros(d)
        for j in range(J):
            if in_group[j]:
                wsum += w[j]
                for a in range(d):
                    mean[a] += w[j] * m[j, a]
        for a in range(d):
            mean[a] /= wsum
        cov = np.zeros((d, d))
        for j in range(J):
            if in_group[j]:
                for a in range(d):
                    for b in range(d):
                        cov[a, b] += w[j] * (P[j, a, b] + (m[j, a] - mean[a]) * (m[j, b] - mean[b]))
        for a in range(d):
            for b in range(d):
                P_out[k, a, b] = 0.5 * (cov[a, b] + cov[b, a]) / wsum
        w_out[k] = wsum
        m_out[k] = mean
        k += 1
    return w_out[:k].copy(), m_out[:k].copy(), P_out[:k].copy(), absorbed


@njit(cache=True)
def greedy_partition(z, gate):
    n, dim = z.shape
    labels = np.full(n, -1, dtype=np.int64)
    sums = np.zeros((n, dim))
    counts = np.zeros(n, dtype=np.int64)
    dist = np.empty(n)
    idx = np.empty(n, dtype=np.int64)
    cent = np.empty(dim)
    k = 0
    for i in range(n):
        # joining c moves x to n/(n+1) of its centroid distance, so only
        # centroids within 2 * gate can accept it
        nc = 0
        for c in range(k):
            s = 0.0
            for a in range(dim):
                t = sums[c, a] / counts[c] - z[i, a]
                s += t * t
            s = math.sqrt(s)
            if s <= 2.0 * gate:
                dist[nc] = s
                idx[nc] = c
                nc += 1
        cand = idx[:nc][np.argsort(dist[:nc], kind="mergesort")]
        for ci in range(nc):
            c = cand[ci]
            for a in range(dim):
                cent[a] = (sums[c, a] + z[i, a]) / (counts[c] + 1)
            ok = True
            s = 0.0
            for a in range(dim):
                t = z[i, a] - cent[a]
                s += t * t
            if math.sqrt(s) > gate:
                ok = False
            if ok:
                for p in range(i):
                    if labels[p] != c:
                        continue
                    s = 0.0
                    for a in range(dim):
                        t = z[p, a] - cent[a]
                        s += t * t
                    if math.sqrt(s) > gate:
                        ok = False
                        break
            if ok:
                labels[i] = c
                for a in range(dim):
                    sums[c, a] += z[i, a]
                counts[c] += 1
                break
        if labels[i] < 0:
            labels[i] = k
            for a in range(dim):
                sums[k, a] = z[i, a]
            counts[k] = 1
            k += 1
    return labels


@njit(cache=True)
def psd_factor(A, tol):
    n, d, _ = A.shape
    L = np.zeros_like(A)
    stol = math.sqrt(tol)
    for r in range(n):
        for j in range(d):
            piv = A[r, j, j]
            for k in range(j):
                piv -= L[r, j, k] * L[r, j, k]
            floor = tol * A[r, j, j]
            if piv < -floor:
                return L, False
            pos = piv > floor
            root = math.sqrt(piv) if pos else 0.0
            L[r, j, j] = root
            for i in range(j + 1, d):
                s = A[r, i, j]
                for k in range(j):
                    s -= L[r, i, k] * L[r, j, k]
                if pos:
                    L[r, i, j] = s / root
                elif abs(s) > stol * math.sqrt(A[r, i, i] * A[r, j, j]) + 1e-300:
                    return L, False
    return L, True


@njit(cache=True)
def cubature_points(zt, L, positions, rotations, c):
    n, dz = zt.shape
    npts = 2 * dz
    s = math.sqrt(dz)
    z = np.zeros((n, 3))
    w = np.zeros((n, 3, 3))
    neg = np.zeros((n, npts), dtype=np.bool_)
    u = np.empty((npts, 3))
    for r in range(n):
        for p in range(npts):
            j = p % dz
            sign = 1.0 if p < dz else -1.0
            tau = zt[r, 0] + sign * s * L[r, 0, j]
            el = zt[r, 1] + sign * s * L[r, 1, j]
            az = zt[r, 2] + sign * s * L[r, 2, j]
            if tau < 0.0:
                neg[r, p] = True
                tau = 0.0
            se = math.sin(el)
            lx = math.cos(az) * se
            ly = math.sin(az) * se
            lz = math.cos(el)
            rng = c * tau
            for a in range(3):
                g = rotations[r, a, 0] * lx + rotations[r, a, 1] * ly + rotations[r, a, 2] * lz
                u[p, a] = positions[r, a] + rng * g
        for a in range(3):
            acc = 0.0
            for p in range(npts):
                acc += u[p, a]
            z[r, a] = acc / npts
        for a in range(3):
            for b in range(a + 1):
                acc = 0.0
                for p in range(npts):
                    acc += (u[p, a] - z[r, a]) * (u[p, b] - z[r, b])
                w[r, a, b] = acc / npts
                w[r, b, a] = w[r, a, b]
    return z, w, neg
