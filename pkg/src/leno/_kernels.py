"""Fused explicit-Euler kernels for the catalogued reactions."""

import numba
import numpy as np

NONE, KPP, ALLEN_CAHN, GRAY_SCOTT, SCHRODINGER = range(5)
CODES = {"kpp": KPP, "kpp-variable": KPP, "kpp-anisotropic": KPP, "allen-cahn": ALLEN_CAHN,
         "gray-scott": GRAY_SCOTT, "schrodinger": SCHRODINGER}


@numba.njit(cache=True, fastmath=False)
def euler_step(U, out, indptr, indices, data, held, source, dt, code, p0, p1, V):
    c, G, M = U.shape
    lap = np.empty((c, M))
    for i in range(G):
        if held[i]:
            out[:, i, :] = U[:, i, :]
            continue
        lap[:] = 0.0
        for v in range(c):
            for k in range(indptr[i], indptr[i + 1]):
                a = data[v, k]
                j = indices[k]
                for m in range(M):
                    lap[v, m] += a * U[v, j, m]
        if code == GRAY_SCOTT:
            s0 = source[0, i]
            s1 = source[1, i]
            for m in range(M):
                u = U[0, i, m]
                s = U[1, i, m]
                sa2 = s * u * u
                out[0, i, m] = u + dt * (sa2 - (p0 + p1) * u - lap[0, m] + s0)
                out[1, i, m] = s + dt * (-sa2 + p1 * (1.0 - s) - lap[1, m] + s1)
            continue
        s0 = source[0, i]
        vi = V[i] if V.shape[0] == G else 0.0
        for m in range(M):
            u = U[0, i, m]
            if code == KPP:
                f = u * (1.0 - u)
            elif code == ALLEN_CAHN:
                f = p0 * (u * u * u - u)
            elif code == SCHRODINGER:
                f = p0 * u - vi * u - p1 * u * u * u
            else:
                f = 0.0
            out[0, i, m] = u + dt * (f - lap[0, m] + s0)
