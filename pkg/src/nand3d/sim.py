"""Desk-scale flash array simulator.

Two modes share one API. Monte Carlo mode ("mc") holds per-cell state and
derives every cell's current threshold voltage functionally from its birth
sample plus model deltas, so advancing the clock is O(1) and reads are
O(cells). Analytic mode ("analytic") skips per-cell state and returns
expected error counts straight from the model, for fast sweeps.

Determinism: all randomness is derived from (master seed, operation key)
via SeedSequence, so identical seeds and operation sequences reproduce
bit-identical results regardless of host parallelism or read order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .models import (
    CellContext,
    ErrorModelSet,
    eval_distribution,
)
from .voltage import (
    LSB_OF_STATE,
    MSB_OF_STATE,
    STATES,
    State,
    VrefTriple,
    expected_rber,
)

__all__ = [
    "ChipGeometry",
    "PageAddress",
    "PageRead",
    "PageRberSample",
    "SimUsageError",
    "FlashSim",
]

# SeedSequence key tags, one namespace per consumer of randomness.
_TAG_BIRTH = 0
_TAG_DATA = 1
_TAG_FLIP = 2

# Gray decode LUT indexed by msb*2 + lsb.
_STATE_OF_BITS_LUT = np.zeros(4, dtype=np.uint8)
_STATE_OF_BITS_LUT[1 * 2 + 1] = State.ER
_STATE_OF_BITS_LUT[0 * 2 + 1] = State.P1
_STATE_OF_BITS_LUT[0 * 2 + 0] = State.P2
_STATE_OF_BITS_LUT[1 * 2 + 0] = State.P3


class SimUsageError(RuntimeError):
    """Raised for operations the device would refuse (program order, reads
    of erased pages, analytic-mode per-cell queries)."""


@dataclass(frozen=True)
class ChipGeometry:
    chips: int = 4
    blocks_per_chip: int = 8
    wordlines_per_block: int = 32
    cells_per_wordline: int = 4096

    def __post_init__(self) -> None:
        if min(self.chips, self.blocks_per_chip, self.wordlines_per_block, self.cells_per_wordline) < 1:
            raise ValueError("geometry dimensions must be positive")

    def layer_of(self, wordline: int) -> int:
        """Wordline-to-layer map; the default stack is one layer per wordline."""
        return wordline

    @property
    def n_layers(self) -> int:
        return self.wordlines_per_block


@dataclass(frozen=True)
class PageAddress:
    chip: int
    block: int
    wordline: int
    page_type: str  # "msb" or "lsb"

    def __post_init__(self) -> None:
        if self.page_type not in ("msb", "lsb"):
            raise ValueError(f"page_type must be 'msb' or 'lsb', got {self.page_type!r}")


@dataclass
class PageRead:
    """Outcome of one page read. In analytic mode bits is None and
    raw_errors is the expected (fractional) error count."""

    bits: np.ndarray | None
    n_bits: int
    raw_errors: float
    rber: float
    expected: bool

    def replace_bits(self, bits: np.ndarray, n_errors: int) -> "PageRead":
        """Same read with corrected/stitched bits and a recounted error total."""
        return PageRead(
            bits=bits,
            n_bits=self.n_bits,
            raw_errors=float(n_errors),
            rber=n_errors / self.n_bits,
            expected=False,
        )


@dataclass(frozen=True)
class PageRberSample:
    wordline: int
    layer: int
    page_type: str
    rber: float


class _Block:
    """Per-block cell arrays, allocated lazily on first touch."""

    def __init__(self, geom: ChipGeometry, mc: bool):
        n_wl, n_cells = geom.wordlines_per_block, geom.cells_per_wordline
        self.states = np.zeros((n_wl, n_cells), dtype=np.uint8)
        self.programmed = np.zeros(n_wl, dtype=bool)
        self.disturbs = np.zeros(n_wl, dtype=np.int64)
        if mc:
            self.z = np.zeros((n_wl, n_cells), dtype=np.float64)
            self.pi_shift = np.zeros((n_wl, n_cells), dtype=np.float64)
            self.swing = np.zeros((n_wl, n_cells), dtype=np.float64)
        self.pec = 0
        self.program_epoch_s: float | None = None
        self.pending_cycle = False
        self.read_counter = 0


class FlashSim:
    """A small flash array driven by the ground-truth error models."""

    def __init__(
        self,
        models: ErrorModelSet,
        geometry: ChipGeometry | None = None,
        seed: int = 0,
        mode: str = "mc",
        enable_interference: bool = True,
        enable_retention_interference: bool = True,
        enable_read_errors: bool = False,
        dwell_s: float = 0.5,
    ):
        if mode not in ("mc", "analytic"):
            raise ValueError(f"mode must be 'mc' or 'analytic', got {mode!r}")
        self.models = models
        self.geometry = geometry or ChipGeometry()
        if models.profile.n_layers < self.geometry.n_layers:
            raise ValueError(
                f"layer profile covers {models.profile.n_layers} layers, "
                f"geometry needs {self.geometry.n_layers}"
            )
        self.seed = int(seed)
        self.mode = mode
        self.enable_interference = enable_interference
        self.enable_retention_interference = enable_retention_interference
        self.enable_read_errors = enable_read_errors
        self.dwell_s = dwell_s
        self.clock_s = 0.0
        self._blocks: dict[tuple[int, int], _Block] = {}
        self.metadata = {
            "seed": self.seed,
            "mode": mode,
            "dwell_s": dwell_s,
            "kernel_backend": _kernels.backend_name(),
            "geometry": {
                "chips": self.geometry.chips,
                "blocks_per_chip": self.geometry.blocks_per_chip,
                "wordlines_per_block": self.geometry.wordlines_per_block,
                "cells_per_wordline": self.geometry.cells_per_wordline,
            },
        }

    # -- plumbing ---------------------------------------------------------

    def _rng(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence((self.seed,) + key))

    def _check_addr(self, chip: int, block: int, wordline: int | None = None) -> None:
        g = self.geometry
        if not (0 <= chip < g.chips and 0 <= block < g.blocks_per_chip):
            raise SimUsageError(f"no such block: chip {chip}, block {block}")
        if wordline is not None and not 0 <= wordline < g.wordlines_per_block:
            raise SimUsageError(f"no such wordline: {wordline}")

    def _block(self, chip: int, block: int) -> _Block:
        self._check_addr(chip, block)
        key = (chip, block)
        if key not in self._blocks:
            self._blocks[key] = _Block(self.geometry, self.mode == "mc")
        return self._blocks[key]

    def advance_clock(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("the clock only moves forward")
        self.clock_s += seconds

    def retention_s(self, chip: int, block: int) -> float:
        """Retention since block program, clamped below by the model's t_min."""
        b = self._block(chip, block)
        if b.program_epoch_s is None:
            raise SimUsageError("block has never been programmed")
        return max(self.clock_s - b.program_epoch_s, self.models.wear.t_min_s)

    def block_metadata(self, chip: int, block: int) -> dict:
        b = self._block(chip, block)
        return {
            "pec": b.pec,
            "program_epoch_s": b.program_epoch_s,
            "retention_s": None if b.program_epoch_s is None else self.retention_s(chip, block),
            "clock_s": self.clock_s,
            "read_counter": b.read_counter,
            "dwell_s": self.dwell_s,
            "programmed": b.programmed.copy(),
        }

    # -- erase / program ---------------------------------------------------

    def erase_block(self, chip: int, block: int) -> None:
        b = self._block(chip, block)
        b.states[:] = State.ER
        b.programmed[:] = False
        b.disturbs[:] = 0
        if self.mode == "mc":
            b.z[:] = 0.0
            b.pi_shift[:] = 0.0
            b.swing[:] = 0.0
        b.program_epoch_s = None
        b.pending_cycle = True

    def add_wear(self, chip: int, block: int, cycles: int) -> None:
        """Wear fast-forward: account P/E cycles without writing data.

        Equivalent to cycling the block with no intermediate reads; the
        models depend only on the count. Advances the clock by the dwell
        time per cycle and leaves the block erased.
        """
        if cycles < 0:
            raise ValueError("cycles must be nonnegative")
        b = self._block(chip, block)
        self.erase_block(chip, block)
        b.pec += cycles
        b.pending_cycle = True
        self.advance_clock(self.dwell_s * cycles)

    def _birth_stats(self, b: _Block, wordline: int) -> tuple[np.ndarray, np.ndarray]:
        ctx = CellContext(
            pec=b.pec, retention_s=self.models.wear.t_min_s, layer=self.geometry.layer_of(wordline)
        )
        dists = [eval_distribution(self.models, ctx, s) for s in STATES]
        mu4 = np.array([d.mean for d in dists])
        sig4 = np.array([d.stdev for d in dists])
        return mu4, sig4

    def program_wordline(
        self,
        chip: int,
        block: int,
        wordline: int,
        msb_bits: np.ndarray | None = None,
        lsb_bits: np.ndarray | None = None,
        enforce_order: bool = True,
        known_blanks: frozenset[int] | tuple[int, ...] = (),
    ) -> None:
        """One-shot program of both pages of a wordline.

        Data defaults to a seed-derived random pattern. Wordlines must be
        programmed in order; lower wordlines may only be skipped when they
        are declared blank (RAID layouts) or enforce_order is False (the
        RAID writer validates its own order).
        """
        self._check_addr(chip, block, wordline)
        b = self._block(chip, block)
        if b.programmed[wordline]:
            raise SimUsageError(f"wordline {wordline} already programmed; erase first")
        if enforce_order:
            lower = [
                w for w in range(wordline) if not b.programmed[w] and w not in known_blanks
            ]
            if lower:
                raise SimUsageError(
                    f"wordline {wordline} programmed before lower wordlines {lower}"
                )

        n_cells = self.geometry.cells_per_wordline
        # PEC accounting: an erase/program pair is one cycle, charged at
        # the first program after the erase.
        if b.pending_cycle:
            b.pec += 1
            b.pending_cycle = False
        if b.program_epoch_s is None:
            b.program_epoch_s = self.clock_s

        if msb_bits is None or lsb_bits is None:
            rng = self._rng(_TAG_DATA, chip, block, wordline, b.pec)
            rand = rng.integers(0, 2, size=(2, n_cells), dtype=np.uint8)
            if msb_bits is None:
                msb_bits = rand[0]
            if lsb_bits is None:
                lsb_bits = rand[1]
        msb_bits = np.asarray(msb_bits, dtype=np.uint8)
        lsb_bits = np.asarray(lsb_bits, dtype=np.uint8)
        if msb_bits.shape != (n_cells,) or lsb_bits.shape != (n_cells,):
            raise ValueError(f"page data must have shape ({n_cells},)")
        states = _STATE_OF_BITS_LUT[msb_bits * 2 + lsb_bits]
        b.states[wordline] = states
        b.programmed[wordline] = True

        if self.mode != "mc":
            return
        rng = self._rng(_TAG_BIRTH, chip, block, wordline, b.pec)
        z = rng.standard_normal(n_cells)
        b.z[wordline] = z
        b.pi_shift[wordline] = 0.0

        mu4, sig4 = self._birth_stats(b, wordline)
        vth_birth = mu4[states] + z * sig4[states]
        # Aggressor program swing: final voltage above the erased-state mean.
        swing = np.maximum(vth_birth - mu4[State.ER], 0.0)
        b.swing[wordline] = swing
        if self.enable_interference:
            inter = self.models.interference
            if wordline > 0 and b.programmed[wordline - 1]:
                # This wordline is the next-wordline aggressor for wordline-1.
                b.pi_shift[wordline - 1] += inter.coupling_next * swing
                # Wordline-1 is the previous-wordline aggressor for this one;
                # only cells left erased keep that shift.
                er_mask = states == State.ER
                b.pi_shift[wordline, er_mask] += (
                    inter.coupling_prev * b.swing[wordline - 1, er_mask]
                )

    def program_block(
        self,
        chip: int,
        block: int,
        data: dict[int, tuple[np.ndarray, np.ndarray]] | None = None,
        blanks: frozenset[int] | tuple[int, ...] = (),
    ) -> None:
        """Program all non-blank wordlines in order with (msb, lsb) data."""
        blanks = frozenset(blanks)
        for wl in range(self.geometry.wordlines_per_block):
            if wl in blanks:
                continue
            msb, lsb = (None, None) if data is None or wl not in data else data[wl]
            self.program_wordline(
                chip, block, wl, msb, lsb, enforce_order=True, known_blanks=blanks
            )

    def cycle_block(self, chip: int, block: int, cycles: int = 1) -> None:
        """Erase+program the block `cycles` times with fresh random data."""
        for _ in range(cycles):
            self.erase_block(chip, block)
            self.program_block(chip, block)
            self.advance_clock(self.dwell_s)

    # -- reads -------------------------------------------------------------

    def _context(self, chip: int, block: int, wordline: int) -> CellContext:
        b = self._block(chip, block)
        return CellContext(
            pec=b.pec,
            retention_s=self.retention_s(chip, block),
            layer=self.geometry.layer_of(wordline),
            read_disturbs=int(b.disturbs[wordline]),
        )

    def _state_stats(self, ctx: CellContext) -> tuple[np.ndarray, np.ndarray]:
        dists = [eval_distribution(self.models, ctx, s) for s in STATES]
        return np.array([d.mean for d in dists]), np.array([d.stdev for d in dists])

    def _neighbor_states(self, b: _Block, wordline: int) -> np.ndarray | None:
        """Next-wordline same-bitline neighbor states; None past the last
        wordline. An erased next wordline counts as ER neighbors."""
        if not self.enable_retention_interference:
            return None
        if wordline + 1 >= self.geometry.wordlines_per_block:
            return None
        return b.states[wordline + 1]

    def cell_voltages(self, chip: int, block: int, wordline: int) -> np.ndarray:
        """Current ground-truth per-cell threshold voltages (MC only)."""
        if self.mode != "mc":
            raise SimUsageError("per-cell voltages only exist in mc mode")
        b = self._block(chip, block)
        if not b.programmed[wordline]:
            raise SimUsageError(f"wordline {wordline} is erased")
        ctx = self._context(chip, block, wordline)
        mu4, sig4 = self._state_stats(ctx)
        neighbors = self._neighbor_states(b, wordline)
        adj16 = None
        if neighbors is not None:
            adj16 = self.models.retention_interference.scaled_table(ctx.retention_s)
        return _kernels.vth_now(
            b.states[wordline], b.z[wordline], b.pi_shift[wordline], mu4, sig4, adj16, neighbors
        )

    def true_page_bits(self, addr: PageAddress) -> np.ndarray:
        """Ground-truth programmed bits of a page (evaluation helper)."""
        b = self._block(addr.chip, addr.block)
        if not b.programmed[addr.wordline]:
            raise SimUsageError(f"wordline {addr.wordline} is erased")
        lut = MSB_OF_STATE if addr.page_type == "msb" else LSB_OF_STATE
        return lut[b.states[addr.wordline]]

    def true_states(self, chip: int, block: int, wordline: int) -> np.ndarray:
        """Ground-truth programmed states of a wordline (evaluation helper)."""
        b = self._block(chip, block)
        if not b.programmed[wordline]:
            raise SimUsageError(f"wordline {wordline} is erased")
        return b.states[wordline].copy()

    def stored_block_data(self, chip: int, block: int) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        """True (msb, lsb) page bits of every programmed wordline.

        This is what a refresh rewrites: data recovered through the ECC
        path equals the original, so the simulator hands back ground truth.
        """
        b = self._block(chip, block)
        out = {}
        for wl in range(self.geometry.wordlines_per_block):
            if b.programmed[wl]:
                states = b.states[wl]
                out[wl] = (MSB_OF_STATE[states].copy(), LSB_OF_STATE[states].copy())
        return out

    def neighbor_states_for_read(self, addr: PageAddress, vrefs: VrefTriple) -> np.ndarray | None:
        """Sensed next-wordline states, as a recovery read would see them.

        Reads both pages of the next wordline at the given references and
        Gray-decodes them. Returns None past the last wordline; an erased
        next wordline is known erased from controller metadata and returns
        all-ER without a read.
        """
        nxt = addr.wordline + 1
        if nxt >= self.geometry.wordlines_per_block:
            return None
        b = self._block(addr.chip, addr.block)
        if not b.programmed[nxt]:
            return np.full(self.geometry.cells_per_wordline, State.ER, dtype=np.uint8)
        msb = self.read_page(PageAddress(addr.chip, addr.block, nxt, "msb"), vrefs).bits
        lsb = self.read_page(PageAddress(addr.chip, addr.block, nxt, "lsb"), vrefs).bits
        return _STATE_OF_BITS_LUT[msb.astype(np.int64) * 2 + lsb]

    def _bump_disturbs(self, b: _Block, wordline: int) -> None:
        # A read disturbs every other wordline of the block.
        b.disturbs += 1
        b.disturbs[wordline] -= 1

    def read_page(self, addr: PageAddress, vrefs: VrefTriple) -> PageRead:
        """Read one page at the given references.

        MC mode senses the per-cell voltages (optionally with comparator
        read errors) and counts real bit errors; analytic mode returns the
        model-expected RBER. Either way the read disturbs the rest of the
        block.
        """
        b = self._block(addr.chip, addr.block)
        self._check_addr(addr.chip, addr.block, addr.wordline)
        if not b.programmed[addr.wordline]:
            raise SimUsageError(f"reading erased wordline {addr.wordline}")
        n_cells = self.geometry.cells_per_wordline
        msb_page = addr.page_type == "msb"

        if self.mode == "analytic":
            ctx = self._context(addr.chip, addr.block, addr.wordline)
            dists = [eval_distribution(self.models, ctx, s) for s in STATES]
            est = expected_rber(dists, vrefs)
            rber = est.msb if msb_page else est.lsb
            self._bump_disturbs(b, addr.wordline)
            b.read_counter += 1
            return PageRead(
                bits=None, n_bits=n_cells, raw_errors=rber * n_cells, rber=rber, expected=True
            )

        vth = self.cell_voltages(addr.chip, addr.block, addr.wordline)
        true_bits = self.true_page_bits(addr)
        flip1 = flip2 = None
        if self.enable_read_errors:
            page_code = 0 if msb_page else 1
            rng = self._rng(
                _TAG_FLIP, addr.chip, addr.block, addr.wordline, page_code, b.read_counter
            )
            u = rng.random((2, n_cells))
            if msb_page:
                p1 = self.models.read_error.probability(vth - vrefs.va)
                p2 = self.models.read_error.probability(vth - vrefs.vc)
                flip1 = (u[0] < p1).astype(np.uint8)
                flip2 = (u[1] < p2).astype(np.uint8)
            else:
                p1 = self.models.read_error.probability(vth - vrefs.vb)
                flip1 = (u[0] < p1).astype(np.uint8)
        bits, nerr = _kernels.page_read(vth, true_bits, vrefs, msb_page, flip1, flip2)
        self._bump_disturbs(b, addr.wordline)
        b.read_counter += 1
        return PageRead(
            bits=bits, n_bits=n_cells, raw_errors=nerr, rber=nerr / n_cells, expected=False
        )

    def induce_read_disturb(self, chip: int, block: int, wordline: int, reads: int) -> None:
        """Account `reads` repeated reads of one wordline without sensing.

        Bulk equivalent of looping read_page for disturb-accounting
        purposes; disturb is linear in the count so the loop is collapsed.
        """
        if reads < 0:
            raise ValueError("reads must be nonnegative")
        b = self._block(chip, block)
        self._check_addr(chip, block, wordline)
        b.disturbs += reads
        b.disturbs[wordline] -= reads
        b.read_counter += reads

    def sweep_read(self, chip: int, block: int, wordline: int) -> np.ndarray:
        """Characterization staircase read: per-cell Vth estimates.

        Steps a read reference across the supported grid and records where
        each cell first conducts, yielding the true voltage quantized to
        the grid step (half-step centering). Read-error flips are not
        modeled; characterization combines repeated reads to cancel them.
        """
        vth = self.cell_voltages(chip, block, wordline)
        m = self.models
        est = m.grid_lo + (np.floor((vth - m.grid_lo) / m.grid_step) + 0.5) * m.grid_step
        return np.clip(est, m.grid_lo + 0.5 * m.grid_step, m.grid_hi - 0.5 * m.grid_step)

    # -- measurement -------------------------------------------------------

    def measure_block_rber(self, chip: int, block: int, policy) -> list[PageRberSample]:
        """Per-page RBER of a block under a vref policy.

        policy exposes vrefs(pec, retention_s, layer) -> VrefTriple.
        """
        b = self._block(chip, block)
        pec = b.pec
        ret = self.retention_s(chip, block)
        out = []
        for wl in range(self.geometry.wordlines_per_block):
            if not b.programmed[wl]:
                continue
            layer = self.geometry.layer_of(wl)
            vrefs = policy.vrefs(pec, ret, layer)
            for page_type in ("msb", "lsb"):
                r = self.read_page(PageAddress(chip, block, wl, page_type), vrefs)
                out.append(PageRberSample(wordline=wl, layer=layer, page_type=page_type, rber=r.rber))
        return out
