"""Compiled per-link loops behind the WMMSE iteration.

Links are tagged with an integer slot: two links interfere exactly when
their slots are equal. Dedicated subcarriers get negative, cell-specific
slots and shared subcarriers their non-negative index, so the same test
covers intracell and intercell coupling.

Every kernel returns a status alongside its result (-1 on success,
otherwise the index of the offending link) and leaves raising to Python.
"""

import numba
import numpy as np

from .linalg import _cholesky, _gauss_jordan

_C = np.complex128


@numba.njit(cache=True)
def _mm(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m), dtype=_C)
    for i in range(n):
        for t in range(k):
            x = a[i, t]
            for j in range(m):
                out[i, j] += x * b[t, j]
    return out


@numba.njit(cache=True)
def _mmh(a, b):
    # a @ b^H
    n, k = a.shape
    m = b.shape[0]
    out = np.zeros((n, m), dtype=_C)
    for i in range(n):
        for j in range(m):
            s = 0j
            for t in range(k):
                s += a[i, t] * np.conj(b[j, t])
            out[i, j] = s
    return out


@numba.njit(cache=True)
def _hmm(a, b):
    # a^H @ b
    k, n = a.shape
    m = b.shape[1]
    out = np.zeros((n, m), dtype=_C)
    for t in range(k):
        for i in range(n):
            x = np.conj(a[t, i])
            for j in range(m):
                out[i, j] += x * b[t, j]
    return out


@numba.njit(cache=True)
def _hermitize(m):
    n = m.shape[0]
    for i in range(n):
        m[i, i] = m[i, i].real
        for j in range(i + 1, n):
            v = 0.5 * (m[i, j] + np.conj(m[j, i]))
            m[i, j] = v
            m[j, i] = np.conj(v)


@numba.njit(cache=True)
def interference(H, Hx, T, slot, To, slot_o, sigma2):
    """J[l]: intracell plus intercell interference plus noise at link l."""
    L, nr, _ = H.shape
    J = np.zeros((L, nr, nr), dtype=_C)
    for l in range(L):
        for m in range(L):
            if m != l and slot[m] == slot[l]:
                g = _mm(H[l], T[m])
                J[l] += _mmh(g, g)
        for m in range(To.shape[0]):
            if slot_o[m] == slot[l]:
                g = _mm(Hx[l], To[m])
                J[l] += _mmh(g, g)
        for i in range(nr):
            J[l, i, i] += sigma2
        _hermitize(J[l])
    return J


@numba.njit(cache=True)
def receivers(H, T, J, rtol):
    """MMSE receivers, weights ``(I - U^H H T)^{-1}`` and ``log2 det W``."""
    L, nr, _ = H.shape
    a = T.shape[2]
    HT = np.empty((L, nr, a), dtype=_C)
    M = np.empty((L, nr, nr), dtype=_C)
    for l in range(L):
        HT[l] = _mm(H[l], T[l])
        M[l] = _mmh(HT[l], HT[l]) + J[l]
    U = HT.copy()
    rate = np.zeros(L)
    bad = _gauss_jordan(M, U, rtol)
    if bad >= 0:
        return U, M, rate, bad
    E = np.empty((L, a, a), dtype=_C)
    W = np.zeros((L, a, a), dtype=_C)
    for l in range(L):
        E[l] = -_hmm(U[l], HT[l])
        for i in range(a):
            E[l, i, i] += 1.0
            W[l, i, i] = 1.0
        _hermitize(E[l])
    bad = _gauss_jordan(E, W, rtol)
    if bad >= 0:
        return U, W, rate, bad
    for l in range(L):
        _hermitize(W[l])
    low = np.zeros_like(W)
    bad = _cholesky(W, low)
    if bad >= 0:
        return U, W, rate, bad
    for l in range(L):
        s = 0.0
        for i in range(a):
            s += np.log2(low[l, i, i].real)
        rate[l] = max(2.0 * s, 0.0)
    return U, W, rate, -1


@numba.njit(cache=True)
def _weighted_outer(G, U, W, mu):
    # mu G^H U W U^H G per link
    L = G.shape[0]
    n = G.shape[2]
    Q = np.empty((L, n, n), dtype=_C)
    for l in range(L):
        gu = _hmm(G[l], U[l])
        Q[l] = mu[l] * _mmh(_mm(gu, W[l]), gu)
    return Q


@numba.njit(cache=True)
def system(H, U, W, mu, slot, Gx_o, U_o, W_o, mu_o, slot_o):
    """A[l] and B[l] of ``T_l(lambda) = (A_l + lambda I)^{-1} B_l``."""
    L, _, nt = H.shape
    a = U.shape[2]
    Q = _weighted_outer(H, U, W, mu)
    Qx = _weighted_outer(Gx_o, U_o, W_o, mu_o)
    A = np.zeros((L, nt, nt), dtype=_C)
    B = np.empty((L, nt, a), dtype=_C)
    for l in range(L):
        for m in range(L):
            if slot[m] == slot[l]:
                A[l] += Q[m]
        for m in range(Qx.shape[0]):
            if slot_o[m] == slot[l]:
                A[l] += Qx[m]
        _hermitize(A[l])
        B[l] = mu[l] * _mm(_hmm(H[l], U[l]), W[l])
    return A, B


@numba.njit(cache=True)
def eigen_system(A, B, null_rtol):
    """Eigenpairs of each A with null directions set to +inf, and ``C = V^H B``."""
    L, n, _ = A.shape
    a = B.shape[2]
    d = np.empty((L, n))
    V = np.empty((L, n, n), dtype=_C)
    C = np.empty((L, n, a), dtype=_C)
    for l in range(L):
        w, v = np.linalg.eigh(A[l])
        top = max(w[n - 1], 0.0)
        for i in range(n):
            d[l, i] = np.inf if w[i] <= null_rtol * top else w[i]
        V[l] = v
        C[l] = _hmm(v, B[l])
    return d, V, C


@numba.njit(cache=True)
def power_terms(d, C):
    """Flattened ``(|c|^2, d)`` pairs of the finite eigenvalues."""
    L, n = d.shape
    a = C.shape[2]
    num = np.empty(L * n)
    dd = np.empty(L * n)
    k = 0
    for l in range(L):
        for i in range(n):
            if np.isfinite(d[l, i]):
                s = 0.0
                for j in range(a):
                    s += C[l, i, j].real ** 2 + C[l, i, j].imag ** 2
                num[k] = s
                dd[k] = d[l, i]
                k += 1
    return num[:k], dd[:k]


@numba.njit(cache=True)
def power(num, d, lam):
    total = 0.0
    for i in range(num.shape[0]):
        total += num[i] / (d[i] + lam) ** 2
    return total


@numba.njit(cache=True)
def bisect(num, d, p_max, tol, max_steps):
    """Multiplier bringing the power just under `p_max`; (lambda, bracket found)."""
    if power(num, d, 0.0) <= p_max:
        return 0.0, True
    lo = 0.0
    hi = 1.0
    steps = 0
    while power(num, d, hi) > p_max:
        lo = hi
        hi *= 2.0
        steps += 1
        if steps > max_steps:
            return hi, False
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        if not (lo < mid < hi):
            break
        p = power(num, d, mid)
        if p_max - tol <= p <= p_max:
            return mid, True
        if p > p_max:
            lo = mid
        else:
            hi = mid
    return hi, True


@numba.njit(cache=True)
def precoders(d, V, C, lam):
    L, n, a = C.shape
    T = np.empty((L, n, a), dtype=_C)
    for l in range(L):
        S = np.empty((n, a), dtype=_C)
        for i in range(n):
            f = 1.0 / (d[l, i] + lam)
            for j in range(a):
                S[i, j] = C[l, i, j] * f
        T[l] = _mm(V[l], S)
    return T
