"""Layer-interleaved RAID layouts over a multi-chip block stripe.

A RAID group spans m chips (m-1 data pages plus one XOR parity page).
The conventional layout groups the same (wordline, page type) across all
chips, so a weak layer lands m times in one group. The layer-interleaved
layout staggers wordlines across chips and alternates MSB/LSB page types,
so each group mixes layers and page types; the wordlines that would wrap
around a chip's stagger are left blank (never programmed, never read).

With m chips and n wordlines per block (m dividing n, stride s = n/m):
group g (0 <= g < 2*(n-s)) with w = g//2 places its member on chip c at
wordline (w + c*s) mod n, as an MSB page iff (c + g) is even. Chip c
leaves wordlines with (w - c*s) mod n in [n-s, n) blank. s = 1 is the
supported, tested configuration; s > 1 is flagged experimental.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .sim import FlashSim, PageAddress, SimUsageError

__all__ = [
    "RaidMember",
    "RaidLayout",
    "build_liraid_layout",
    "build_conventional_layout",
    "layout_table",
    "group_rber",
    "worst_case_group_rber",
    "raid_write",
    "raid_recover",
]


@dataclass(frozen=True)
class RaidMember:
    chip: int
    wordline: int
    page_type: str


@dataclass(frozen=True)
class RaidLayout:
    kind: str
    chips: int
    wordlines: int
    groups: tuple[tuple[RaidMember, ...], ...]
    blanks: frozenset[tuple[int, int]]  # (chip, wordline) never programmed

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def blank_wordlines(self, chip: int) -> frozenset[int]:
        return frozenset(wl for c, wl in self.blanks if c == chip)

    def blank_overhead(self) -> float:
        """Fraction of page capacity sacrificed to blank wordlines."""
        total_pages = self.chips * self.wordlines * 2
        return 2 * len(self.blanks) / total_pages

    def member_map(self) -> dict[tuple[int, int, str], int]:
        out: dict[tuple[int, int, str], int] = {}
        for g, members in enumerate(self.groups):
            for mem in members:
                out[(mem.chip, mem.wordline, mem.page_type)] = g
        return out


def build_liraid_layout(chips: int, wordlines: int) -> RaidLayout:
    """Layer-interleaved layout for m chips and n wordlines (m divides n)."""
    m, n = chips, wordlines
    if m < 2 or n < 2:
        raise ValueError("need at least 2 chips and 2 wordlines")
    if n % m != 0:
        raise ValueError(f"chips ({m}) must divide wordlines ({n})")
    s = n // m
    if s > 1:
        warnings.warn(
            f"stride {s} > 1 is experimental; stride 1 (chips == wordlines) is the tested shape",
            UserWarning,
        )
    groups = []
    for g in range(2 * (n - s)):
        w = g // 2
        members = []
        for c in range(m):
            wl = (w + c * s) % n
            page_type = "msb" if (c + g) % 2 == 0 else "lsb"
            members.append(RaidMember(chip=c, wordline=wl, page_type=page_type))
        groups.append(tuple(members))
    blanks = frozenset(
        (c, wl) for c in range(m) for wl in range(n) if (wl - c * s) % n >= n - s
    )
    layout = RaidLayout(kind="li", chips=m, wordlines=n, groups=tuple(groups), blanks=blanks)
    _validate(layout)
    return layout


def build_conventional_layout(chips: int, wordlines: int) -> RaidLayout:
    """Conventional layout: one group per (wordline, page type), no blanks."""
    if chips < 2 or wordlines < 1:
        raise ValueError("need at least 2 chips and 1 wordline")
    groups = []
    for wl in range(wordlines):
        for page_type in ("msb", "lsb"):
            groups.append(
                tuple(RaidMember(chip=c, wordline=wl, page_type=page_type) for c in range(chips))
            )
    return RaidLayout(
        kind="conventional",
        chips=chips,
        wordlines=wordlines,
        groups=tuple(groups),
        blanks=frozenset(),
    )


def _validate(layout: RaidLayout) -> None:
    seen: set[tuple[int, int, str]] = set()
    for members in layout.groups:
        if len({mem.chip for mem in members}) != layout.chips:
            raise AssertionError("a group must span all chips exactly once")
        for mem in members:
            key = (mem.chip, mem.wordline, mem.page_type)
            if key in seen:
                raise AssertionError(f"page {key} assigned to two groups")
            if (mem.chip, mem.wordline) in layout.blanks:
                raise AssertionError(f"page {key} assigned on a blank wordline")
            seen.add(key)
    total_pages = layout.chips * layout.wordlines * 2
    if len(seen) + 2 * len(layout.blanks) != total_pages:
        raise AssertionError("groups plus blanks must cover the stripe exactly")


def layout_table(layout: RaidLayout) -> str:
    """Human-readable stripe map, one row per (wordline, page type)."""
    assign: dict[tuple[int, int, str], str] = {}
    for g, members in enumerate(layout.groups):
        for mem in members:
            assign[(mem.chip, mem.wordline, mem.page_type)] = f"G{g}"
    for chip, wl in layout.blanks:
        for page_type in ("msb", "lsb"):
            assign[(chip, wl, page_type)] = "Blank"
    header = ["WL/Page"] + [f"Chip {c}" for c in range(layout.chips)]
    rows = [header]
    for wl in range(layout.wordlines):
        for page_type in ("msb", "lsb"):
            row = [f"WL{wl} {page_type.upper()}"]
            for c in range(layout.chips):
                row.append(assign[(c, wl, page_type)])
            rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in rows]
    return "\n".join(lines)


def group_rber(
    layout: RaidLayout,
    rber_map: dict[tuple[int, int, str], float],
    reduce: str = "mean",
) -> list[float]:
    """Per-group RBER aggregate from a per-page rber map.

    Keys are (chip, wordline, page_type). reduce="mean" is the group
    aggregate the harness uses (parity spreads a stripe's risk across its
    members, so the group statistic is its mean member RBER); reduce="max"
    reports the weakest member instead.
    """
    if reduce not in ("mean", "max"):
        raise ValueError("reduce must be 'mean' or 'max'")
    out = []
    for members in layout.groups:
        vals = [rber_map[(mem.chip, mem.wordline, mem.page_type)] for mem in members]
        out.append(float(np.mean(vals)) if reduce == "mean" else float(max(vals)))
    return out


def worst_case_group_rber(
    layout: RaidLayout,
    rber_map: dict[tuple[int, int, str], float],
    reduce: str = "mean",
) -> float:
    """Max over groups of the group RBER aggregate."""
    return max(group_rber(layout, rber_map, reduce=reduce))


def _stripe_program_order(layout: RaidLayout) -> list[tuple[int, int, dict[str, int]]]:
    """Wordline program schedule honoring per-chip wordline order.

    Returns (chip, wordline, {page_type: group}) in an order where each
    chip's wordlines ascend except across its blank run, which is exactly
    the wrap the interleaved layout makes safe (the wordline past the blank
    run has no programmed successor to disturb it retroactively).
    """
    per_chip: dict[int, dict[int, dict[str, int]]] = {}
    for g, members in enumerate(layout.groups):
        for mem in members:
            per_chip.setdefault(mem.chip, {}).setdefault(mem.wordline, {})[mem.page_type] = g
    order = []
    n = layout.wordlines
    s = n // layout.chips if layout.kind == "li" else 0
    for pair_step in range(n):
        for chip in range(layout.chips):
            wls = per_chip.get(chip, {})
            # chip's first programmed wordline is its stagger start
            wl = (pair_step + chip * s) % n
            if wl in wls:
                order.append((chip, wl, wls[wl]))
    return order


def raid_write(
    sim: FlashSim,
    block: int,
    layout: RaidLayout,
    data: dict[int, list[np.ndarray]] | None = None,
    seed: int = 0,
) -> dict[int, list[np.ndarray]]:
    """Write one stripe: per group, m-1 data pages plus XOR parity.

    data maps group -> list of m-1 bit arrays; omitted groups get random
    data derived from `seed`. Pages are programmed whole-wordline at a time
    in the layout's stagger order so each chip sees ascending wordlines
    (blanks skipped). Returns the full per-group page contents including
    the parity page (last member position).
    """
    n_cells = sim.geometry.cells_per_wordline
    rng = np.random.default_rng(np.random.SeedSequence((seed, 7)))
    contents: dict[int, list[np.ndarray]] = {}
    for g, members in enumerate(layout.groups):
        m = len(members)
        if data is not None and g in data:
            pages = [np.asarray(p, dtype=np.uint8) for p in data[g]]
            if len(pages) != m - 1:
                raise ValueError(f"group {g}: expected {m - 1} data pages")
        else:
            pages = [rng.integers(0, 2, n_cells, dtype=np.uint8) for _ in range(m - 1)]
        parity = pages[0].copy()
        for p in pages[1:]:
            parity ^= p
        contents[g] = pages + [parity]

    # gather per-(chip, wordline) page bits
    page_bits: dict[tuple[int, int, str], np.ndarray] = {}
    for g, members in enumerate(layout.groups):
        for idx, mem in enumerate(members):
            page_bits[(mem.chip, mem.wordline, mem.page_type)] = contents[g][idx]

    for chip, wl, pages in _stripe_program_order(layout):
        msb = page_bits.get((chip, wl, "msb"))
        lsb = page_bits.get((chip, wl, "lsb"))
        if msb is None or lsb is None:
            raise AssertionError(f"wordline ({chip}, {wl}) missing a page assignment")
        sim.program_wordline(
            chip,
            block,
            wl,
            msb_bits=msb,
            lsb_bits=lsb,
            enforce_order=False,
            known_blanks=layout.blank_wordlines(chip),
        )
    return contents


def raid_recover(
    sim: FlashSim,
    block: int,
    layout: RaidLayout,
    group: int,
    failed_index: int,
    vrefs_for,
) -> np.ndarray:
    """Reconstruct one member of a group by XORing the other members' reads.

    vrefs_for(chip, wordline, page_type) supplies per-page read references.
    """
    members = layout.groups[group]
    if not 0 <= failed_index < len(members):
        raise ValueError("failed_index out of range")
    acc: np.ndarray | None = None
    for idx, mem in enumerate(members):
        if idx == failed_index:
            continue
        vrefs = vrefs_for(mem.chip, mem.wordline, mem.page_type)
        read = sim.read_page(PageAddress(mem.chip, block, mem.wordline, mem.page_type), vrefs)
        if read.bits is None:
            raise SimUsageError("recovery needs real page bits (mc mode)")
        acc = read.bits.copy() if acc is None else acc ^ read.bits
    assert acc is not None
    return acc
