"""64-bit FNV-1a over byte payloads."""

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3

try:
    import numba

    @numba.njit(cache=True)
    def _fnv_kernel(data, h, prime):
        for b in data:
            h ^= np.uint64(b)
            h *= prime
        return h

except ImportError:  # pragma: no cover - numba is a declared dependency
    _fnv_kernel = None


def fnv1a64(payload: bytes) -> int:
    if _fnv_kernel is None or len(payload) < 64:
        h = FNV_OFFSET
        for b in payload:
            h = ((h ^ b) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
        return h
    data = np.frombuffer(payload, dtype=np.uint8)
    return int(_fnv_kernel(data, np.uint64(FNV_OFFSET), np.uint64(FNV_PRIME)))
