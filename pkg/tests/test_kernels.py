"""The two cell-level kernels must be bit-identical across backends: the
numba path is an optimization, never a semantic change. NAND3D_NUMBA=0
selects the numpy fallback at import time, so the cross-backend test runs
the public entry points in subprocesses, one per backend."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from nand3d import _kernels
from nand3d.voltage import VrefTriple

VREFS = VrefTriple(60.0, 150.0, 230.0)


def _random_cells(rng, n=5000):
    states = rng.integers(0, 4, n).astype(np.uint8)
    z = rng.standard_normal(n)
    pi_shift = rng.uniform(0.0, 3.0, n)
    mu4 = np.array([-20.0, 110.0, 190.0, 265.0])
    sig4 = np.array([16.0, 10.0, 10.5, 11.0])
    adj16 = rng.uniform(-1.0, 1.0, 16)
    neighbors = rng.integers(0, 4, n).astype(np.uint8)
    return states, z, pi_shift, mu4, sig4, adj16, neighbors


def test_backend_name_reports_active_path():
    assert _kernels.backend_name() in ("numba", "numpy")
    assert (_kernels.backend_name() == "numba") == _kernels.NUMBA_ENABLED


def test_vth_now_matches_numpy_reference(rng):
    states, z, pi_shift, mu4, sig4, adj16, neighbors = _random_cells(rng)
    got = _kernels.vth_now(states, z, pi_shift, mu4, sig4, adj16, neighbors)
    ref = _kernels._vth_now_np(states, z, pi_shift, mu4, sig4, adj16, neighbors)
    np.testing.assert_array_equal(got, ref)
    got_plain = _kernels.vth_now(states, z, pi_shift, mu4, sig4)
    ref_plain = _kernels._vth_now_np(states, z, pi_shift, mu4, sig4, None, None)
    np.testing.assert_array_equal(got_plain, ref_plain)


@pytest.mark.parametrize("msb_page", [True, False])
@pytest.mark.parametrize("with_flips", [True, False])
def test_page_read_matches_numpy_reference(rng, msb_page, with_flips):
    states, z, pi_shift, mu4, sig4, adj16, neighbors = _random_cells(rng)
    vth = _kernels._vth_now_np(states, z, pi_shift, mu4, sig4, adj16, neighbors)
    true_bits = rng.integers(0, 2, vth.size).astype(np.uint8)
    flip1 = flip2 = None
    f1 = f2 = None
    if with_flips:
        flip1 = (rng.random(vth.size) < 0.05).astype(np.uint8)
        flip2 = (rng.random(vth.size) < 0.05).astype(np.uint8)
        f1 = flip1.astype(bool)
        f2 = flip2.astype(bool) if msb_page else None
    bits, nerr = _kernels.page_read(vth, true_bits, VREFS, msb_page, flip1, flip2)
    ref_bits, ref_nerr = _kernels._page_read_np(
        vth, true_bits, VREFS.va if msb_page else VREFS.vb,
        VREFS.vc if msb_page else 0.0, msb_page, f1, f2,
    )
    np.testing.assert_array_equal(bits, ref_bits)
    assert nerr == ref_nerr
    assert nerr == int(np.count_nonzero(bits != true_bits))


_CHILD = r"""
import json, sys
import numpy as np
from nand3d import _kernels
from nand3d.voltage import VrefTriple

rng = np.random.default_rng(7)
n = 20000
states = rng.integers(0, 4, n).astype(np.uint8)
z = rng.standard_normal(n)
pi = rng.uniform(0.0, 3.0, n)
mu4 = np.array([-20.0, 110.0, 190.0, 265.0])
sig4 = np.array([16.0, 10.0, 10.5, 11.0])
adj16 = rng.uniform(-1.0, 1.0, 16)
nbr = rng.integers(0, 4, n).astype(np.uint8)
vth = _kernels.vth_now(states, z, pi, mu4, sig4, adj16, nbr)
true_bits = rng.integers(0, 2, n).astype(np.uint8)
flip1 = (rng.random(n) < 0.03).astype(np.uint8)
flip2 = (rng.random(n) < 0.03).astype(np.uint8)
out = {"backend": _kernels.backend_name(), "vth_sum": repr(float(vth.sum()))}
for msb in (True, False):
    bits, nerr = _kernels.page_read(vth, true_bits, VrefTriple(60.0, 150.0, 230.0), msb, flip1, flip2)
    out[f"bits_{msb}"] = bits.tobytes().hex()
    out[f"nerr_{msb}"] = nerr
json.dump(out, sys.stdout)
"""


def _run_child(numba_flag: str) -> dict:
    env = dict(os.environ, NAND3D_NUMBA=numba_flag)
    proc = subprocess.run(
        [sys.executable, "-c", _CHILD], capture_output=True, text=True, env=env, check=True
    )
    return json.loads(proc.stdout)


def test_backends_are_bit_identical_end_to_end():
    fast = _run_child("1")
    slow = _run_child("0")
    assert slow["backend"] == "numpy"
    del fast["backend"], slow["backend"]
    assert fast == slow
