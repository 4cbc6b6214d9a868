"""Hot per-cell kernels, numba-compiled when available.

Set NAND3D_NUMBA=0 in the environment to force the pure-numpy fallback
path. Both paths produce bit-identical results: random draws and
exponential terms are precomputed by the caller with numpy, so the kernels
only perform per-element arithmetic, comparisons and integer counting, in
the same order on both paths.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = ["backend_name", "vth_now", "page_read", "NUMBA_ENABLED"]

_want_numba = os.environ.get("NAND3D_NUMBA", "1") != "0"
if _want_numba:
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False
else:
    NUMBA_ENABLED = False


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


# ---------------------------------------------------------------------------
# numpy reference implementations


def _vth_now_np(states, z, pi_shift, mu4, sig4, adj16, neighbors):
    vth = (mu4[states] + z * sig4[states]) + pi_shift
    if neighbors is not None:
        vth = vth + adj16[states * np.uint8(4) + neighbors]
    return vth


def _page_read_np(vth, true_bits, v1, v2, msb_page, flip1, flip2):
    if msb_page:
        ca = vth < v1
        cc = vth < v2
        if flip1 is not None:
            ca = ca ^ flip1
            cc = cc ^ flip2
        bits = (ca | ~cc).astype(np.uint8)
    else:
        cb = vth < v1
        if flip1 is not None:
            cb = cb ^ flip1
        bits = cb.astype(np.uint8)
    nerr = int(np.count_nonzero(bits != true_bits))
    return bits, nerr


# ---------------------------------------------------------------------------
# numba implementations (same math, fused loops)

if NUMBA_ENABLED:

    @njit(cache=True, nogil=True)
    def _vth_now_nb(states, z, pi_shift, mu4, sig4, adj16, neighbors, use_neighbors):
        n = states.shape[0]
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            s = states[i]
            v = (mu4[s] + z[i] * sig4[s]) + pi_shift[i]
            if use_neighbors:
                v = v + adj16[s * 4 + neighbors[i]]
            out[i] = v
        return out

    @njit(cache=True, nogil=True)
    def _page_read_nb(vth, true_bits, v1, v2, msb_page, flip1, flip2, use_flips):
        n = vth.shape[0]
        bits = np.empty(n, dtype=np.uint8)
        nerr = 0
        for i in range(n):
            if msb_page:
                ca = vth[i] < v1
                cc = vth[i] < v2
                if use_flips:
                    ca = ca != (flip1[i] != 0)
                    cc = cc != (flip2[i] != 0)
                b = 1 if (ca or not cc) else 0
            else:
                cb = vth[i] < v1
                if use_flips:
                    cb = cb != (flip1[i] != 0)
                b = 1 if cb else 0
            bits[i] = b
            if b != true_bits[i]:
                nerr += 1
        return bits, nerr


_EMPTY_U8 = np.empty(0, dtype=np.uint8)
_EMPTY_F8 = np.empty(0, dtype=np.float64)


def vth_now(states, z, pi_shift, mu4, sig4, adj16=None, neighbors=None):
    """Current per-cell threshold voltages.

    vth[i] = mu4[state] + z[i]*sig4[state] + pi_shift[i] (+ the scaled
    retention-interference adjustment adj16[state*4 + neighbor] when
    neighbor states are supplied).
    """
    states = np.ascontiguousarray(states, dtype=np.uint8)
    z = np.ascontiguousarray(z, dtype=np.float64)
    pi_shift = np.ascontiguousarray(pi_shift, dtype=np.float64)
    mu4 = np.ascontiguousarray(mu4, dtype=np.float64)
    sig4 = np.ascontiguousarray(sig4, dtype=np.float64)
    use_nb = neighbors is not None
    if use_nb:
        adj16 = np.ascontiguousarray(np.asarray(adj16, dtype=np.float64).reshape(16))
        neighbors = np.ascontiguousarray(neighbors, dtype=np.uint8)
    if NUMBA_ENABLED:
        return _vth_now_nb(
            states,
            z,
            pi_shift,
            mu4,
            sig4,
            adj16 if use_nb else _EMPTY_F8,
            neighbors if use_nb else _EMPTY_U8,
            use_nb,
        )
    return _vth_now_np(states, z, pi_shift, mu4, sig4, adj16, neighbors)


def page_read(vth, true_bits, vrefs, msb_page: bool, flip1=None, flip2=None):
    """Read one page from per-cell threshold voltages.

    MSB pages compare against (va, vc): bit = (vth < va) or not (vth < vc).
    LSB pages compare against vb: bit = (vth < vb). flip1/flip2 are
    precomputed per-comparison error masks (uint8), already drawn by the
    caller; None disables read errors. Returns (bits, error_count) where
    error_count compares against true_bits.
    """
    vth = np.ascontiguousarray(vth, dtype=np.float64)
    true_bits = np.ascontiguousarray(true_bits, dtype=np.uint8)
    if msb_page:
        v1, v2 = float(vrefs.va), float(vrefs.vc)
    else:
        v1, v2 = float(vrefs.vb), 0.0
    use_flips = flip1 is not None
    if use_flips:
        flip1 = np.ascontiguousarray(flip1, dtype=np.uint8)
        flip2 = (
            np.ascontiguousarray(flip2, dtype=np.uint8) if flip2 is not None else _EMPTY_U8
        )
    if NUMBA_ENABLED:
        bits, nerr = _page_read_nb(
            vth,
            true_bits,
            v1,
            v2,
            msb_page,
            flip1 if use_flips else _EMPTY_U8,
            flip2 if use_flips else _EMPTY_U8,
            use_flips,
        )
        return bits, int(nerr)
    f1 = flip1.astype(bool) if use_flips else None
    f2 = flip2.astype(bool) if (use_flips and msb_page) else None
    return _page_read_np(vth, true_bits, v1, v2, msb_page, f1, f2)
