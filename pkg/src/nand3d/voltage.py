"""Threshold-voltage primitives for four-state (two-bit-per-cell) flash.

Voltages are expressed in normalized "voltage steps". A cell stores one of
four states (ER < P1 < P2 < P3) whose threshold voltages are modeled as
Gaussians. A read compares the cell's threshold voltage against up to three
read reference voltages (va < vb < vc); Gray-coded page bits are derived
from the comparison outcomes. The MSB page uses the {va, vc} comparisons,
the LSB page uses {vb}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy.special import ndtr

__all__ = [
    "State",
    "STATES",
    "GRAY_BITS",
    "MSB_OF_STATE",
    "LSB_OF_STATE",
    "StateDistribution",
    "VrefTriple",
    "RberEstimate",
    "gray_encode",
    "gray_decode",
    "read_cell",
    "classify_state",
    "optimal_boundary",
    "transition_matrix",
    "expected_rber",
    "EQUAL_PRIORS",
]


class State(IntEnum):
    """Cell states ordered by nominal threshold voltage."""

    ER = 0
    P1 = 1
    P2 = 2
    P3 = 3


STATES = (State.ER, State.P1, State.P2, State.P3)

# Gray code as (msb, lsb); adjacent states differ in exactly one bit.
GRAY_BITS = {
    State.ER: (1, 1),
    State.P1: (0, 1),
    State.P2: (0, 0),
    State.P3: (1, 0),
}

# Vectorized lookups indexed by state value.
MSB_OF_STATE = np.array([1, 0, 0, 1], dtype=np.uint8)
LSB_OF_STATE = np.array([1, 1, 0, 0], dtype=np.uint8)

_STATE_OF_BITS = {bits: state for state, bits in GRAY_BITS.items()}

EQUAL_PRIORS = (0.25, 0.25, 0.25, 0.25)


def gray_encode(state: State | int) -> tuple[int, int]:
    """Return (msb, lsb) for a state."""
    return GRAY_BITS[State(state)]


def gray_decode(msb: int, lsb: int) -> State:
    """Return the state encoding (msb, lsb)."""
    return _STATE_OF_BITS[(int(msb), int(lsb))]


@dataclass(frozen=True)
class StateDistribution:
    """Gaussian threshold-voltage distribution of one state, in steps."""

    mean: float
    stdev: float

    def __post_init__(self) -> None:
        if not self.stdev > 0.0:
            raise ValueError(f"stdev must be positive, got {self.stdev}")


@dataclass(frozen=True)
class VrefTriple:
    """The three read reference voltages, strictly ordered va < vb < vc."""

    va: float
    vb: float
    vc: float

    def __post_init__(self) -> None:
        if not (self.va < self.vb < self.vc):
            raise ValueError(
                f"read references must satisfy va < vb < vc, got "
                f"({self.va}, {self.vb}, {self.vc})"
            )

    def shifted(self, da: float = 0.0, db: float = 0.0, dc: float = 0.0) -> "VrefTriple":
        return VrefTriple(self.va + da, self.vb + db, self.vc + dc)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.va, self.vb, self.vc)


def read_cell(vth: float, vrefs: VrefTriple) -> tuple[int, int]:
    """Read one cell: the cell conducts at a reference iff vth < vref.

    Returns (msb, lsb). msb = 1 iff vth < va or vth >= vc; lsb = 1 iff
    vth < vb. This is the Gray mapping above applied to the read windows.
    """
    lsb = 1 if vth < vrefs.vb else 0
    msb = 1 if (vth < vrefs.va or vth >= vrefs.vc) else 0
    return msb, lsb


def classify_state(vth: float, vrefs: VrefTriple) -> State:
    """Window membership of a threshold voltage under the given references."""
    if vth < vrefs.va:
        return State.ER
    if vth < vrefs.vb:
        return State.P1
    if vth < vrefs.vc:
        return State.P2
    return State.P3


def optimal_boundary(left: StateDistribution, right: StateDistribution) -> float:
    """Equal-pdf crossing point of two adjacent state distributions.

    With equal priors the misread mass between two Gaussians is minimized
    where their pdfs are equal. For equal stdevs this is exactly the
    midpoint of the means; otherwise it is the root of a quadratic in x
    (equate the log pdfs), and the crossing inside (left.mean, right.mean)
    is the one that separates the states.
    """
    if not left.mean < right.mean:
        raise ValueError(
            f"distributions are not separable: left mean {left.mean} "
            f"must lie below right mean {right.mean}"
        )
    mu_l, sd_l = left.mean, left.stdev
    mu_r, sd_r = right.mean, right.stdev
    if sd_l == sd_r:
        return 0.5 * (mu_l + mu_r)

    # log-pdf equality: (x-mu_l)^2/sd_l^2 + 2 ln sd_l = (x-mu_r)^2/sd_r^2 + 2 ln sd_r
    il = 1.0 / (sd_l * sd_l)
    ir = 1.0 / (sd_r * sd_r)
    a = il - ir
    b = -2.0 * (mu_l * il - mu_r * ir)
    c = mu_l * mu_l * il - mu_r * mu_r * ir + 2.0 * math.log(sd_l / sd_r)
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        raise ValueError("no pdf crossing found (negative discriminant)")
    # Stable quadratic roots: q = -(b + sign(b) sqrt(disc)) / 2.
    sq = math.sqrt(disc)
    q = -0.5 * (b + math.copysign(sq, b))
    roots = []
    if a != 0.0:
        roots.append(q / a)
    if q != 0.0:
        roots.append(c / q)
    inside = [r for r in roots if mu_l < r < mu_r]
    if not inside:
        raise ValueError("no pdf crossing inside the mean interval")
    return inside[0]


def _window_probs(dist: StateDistribution, vrefs: VrefTriple) -> np.ndarray:
    """P(read window) for the four windows under one state's distribution."""
    za = (vrefs.va - dist.mean) / dist.stdev
    zb = (vrefs.vb - dist.mean) / dist.stdev
    zc = (vrefs.vc - dist.mean) / dist.stdev
    ca, cb, cc = ndtr(za), ndtr(zb), ndtr(zc)
    return np.array([ca, cb - ca, cc - cb, 1.0 - cc])


def transition_matrix(
    dists: tuple[StateDistribution, StateDistribution, StateDistribution, StateDistribution],
    vrefs: VrefTriple,
) -> np.ndarray:
    """4x4 matrix T[s, r] = P(cell in state s is read as state r)."""
    return np.vstack([_window_probs(d, vrefs) for d in dists])


@dataclass(frozen=True)
class RberEstimate:
    """Per-bit raw bit error rates plus a per-cell transition breakdown.

    by_transition holds per-cell misread probabilities grouped as the three
    adjacent transitions plus "multi" for everything non-adjacent.
    """

    msb: float
    lsb: float
    by_transition: dict[str, float]

    @property
    def bit_average(self) -> float:
        return 0.5 * (self.msb + self.lsb)


def expected_rber(
    dists,
    vrefs: VrefTriple,
    priors: tuple[float, float, float, float] = EQUAL_PRIORS,
) -> RberEstimate:
    """Expected raw bit error rates for the four-state cell.

    dists is a sequence of four StateDistribution in state order. priors is
    the programmed-state distribution (equal for randomized data). Rates are
    per bit: msb counts cells whose MSB reads wrong over all cells (one MSB
    bit each), likewise lsb.
    """
    dists = tuple(dists)
    if len(dists) != 4:
        raise ValueError("expected four state distributions")
    trans = transition_matrix(dists, vrefs)
    msb = 0.0
    lsb = 0.0
    by = {"er_p1": 0.0, "p1_p2": 0.0, "p2_p3": 0.0, "multi": 0.0}
    for s in STATES:
        ms, ls = GRAY_BITS[s]
        for r in STATES:
            if r == s:
                continue
            p = priors[s] * trans[s, r]
            mr, lr = GRAY_BITS[r]
            if mr != ms:
                msb += p
            if lr != ls:
                lsb += p
            if abs(int(r) - int(s)) == 1:
                key = ("er_p1", "p1_p2", "p2_p3")[min(int(r), int(s))]
                by[key] += p
            else:
                by["multi"] += p
    return RberEstimate(msb=msb, lsb=lsb, by_transition=by)
