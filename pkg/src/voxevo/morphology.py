"""Direct-encoded voxel bodies: material grids, validity, sampling, mutation.

A body is an h x w integer matrix of material codes (row 0 at the top).
A usable body is a single 4-connected blob of non-empty cells containing
at least one actuator. Mutation resamples each cell independently and
repairs the result back to the largest connected component.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import materials

CANONICAL_SIZES = ((5, 5), (7, 7))
MUTATION_RATE = 0.1
SAMPLER_MAX_TRIES = 1000
MUTATION_MAX_TRIES = 100


class InvalidMorphologyError(ValueError):
    """A body grid violates a structural requirement."""


@dataclass(frozen=True)
class Morphology:
    """Immutable h x w grid of material codes."""

    cells: np.ndarray

    def __post_init__(self):
        arr = np.array(self.cells, dtype=np.int8)
        if arr.ndim != 2 or arr.size == 0:
            raise InvalidMorphologyError("cells must be a non-empty 2D grid")
        if arr.min() < 0 or arr.max() >= materials.NUM_CODES:
            raise InvalidMorphologyError("material codes must lie in 0..4")
        arr.setflags(write=False)
        object.__setattr__(self, "cells", arr)

    @property
    def h(self) -> int:
        return self.cells.shape[0]

    @property
    def w(self) -> int:
        return self.cells.shape[1]

    @property
    def is_canonical_size(self) -> bool:
        return (self.h, self.w) in CANONICAL_SIZES

    def nonempty_cells(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(self.cells)
        return list(zip(rows.tolist(), cols.tolist()))

    def active_cells(self) -> list[tuple[int, int]]:
        mask = (self.cells == materials.ACTUATOR_H) | (self.cells == materials.ACTUATOR_V)
        rows, cols = np.nonzero(mask)
        return list(zip(rows.tolist(), cols.tolist()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Morphology):
            return NotImplemented
        return self.cells.shape == other.cells.shape and bool(np.all(self.cells == other.cells))

    def __hash__(self) -> int:
        return hash((self.cells.shape, self.cells.tobytes()))

    def to_json(self) -> dict:
        return {"h": self.h, "w": self.w, "cells": self.cells.tolist()}

    @staticmethod
    def from_json(data: dict) -> "Morphology":
        cells = np.array(data["cells"], dtype=np.int8)
        if cells.shape != (data["h"], data["w"]):
            raise InvalidMorphologyError(
                f"cells shape {cells.shape} does not match declared ({data['h']}, {data['w']})"
            )
        return Morphology(cells)


@dataclass(frozen=True)
class MorphologyDelta:
    """Audit record of a body mutation: (row, col, old_code, new_code) per changed cell."""

    changed_cells: list[tuple[int, int, int, int]] = field(default_factory=list)

    def __post_init__(self):
        for r, c, old, new in self.changed_cells:
            if old == new:
                raise ValueError(f"delta entry at ({r},{c}) does not change the cell")

    def __len__(self) -> int:
        return len(self.changed_cells)


def _component_sizes(cells: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Label 4-connected components of non-empty cells (label 0 = empty)."""
    h, w = cells.shape
    labels = np.zeros((h, w), dtype=np.int32)
    sizes = []
    next_label = 0
    for r in range(h):
        for c in range(w):
            if cells[r, c] == materials.EMPTY or labels[r, c] != 0:
                continue
            next_label += 1
            stack = [(r, c)]
            labels[r, c] = next_label
            count = 0
            while stack:
                rr, cc = stack.pop()
                count += 1
                for nr, nc in ((rr - 1, cc), (rr + 1, cc), (rr, cc - 1), (rr, cc + 1)):
                    if 0 <= nr < h and 0 <= nc < w and cells[nr, nc] != materials.EMPTY and labels[nr, nc] == 0:
                        labels[nr, nc] = next_label
                        stack.append((nr, nc))
            sizes.append(count)
    return labels, sizes


def repair_to_largest_component(cells: np.ndarray) -> np.ndarray:
    """Zero out everything but the largest 4-connected non-empty component.

    Ties go to the component discovered first in row-major order, which is
    the one containing the smallest (row, col) cell. Never adds cells.
    """
    labels, sizes = _component_sizes(cells)
    if not sizes:
        return np.zeros_like(cells)
    keep = int(np.argmax(sizes)) + 1  # argmax takes the first maximum: row-major tie-break
    out = np.where(labels == keep, cells, materials.EMPTY).astype(np.int8)
    return out


def validity_report(m: Morphology) -> tuple[bool, str | None]:
    """Full validity: simulable (non-empty, one connected blob) plus >=1 actuator."""
    ok, reason = simulability_report(m)
    if not ok:
        return ok, reason
    if not m.active_cells():
        return False, "no actuator cell (code 3 or 4)"
    return True, None


def simulability_report(m: Morphology) -> tuple[bool, str | None]:
    """Structural validity only; a simulable body may lack actuators."""
    if not np.any(m.cells != materials.EMPTY):
        return False, "body is empty"
    _, sizes = _component_sizes(m.cells)
    if len(sizes) > 1:
        return False, f"body has {len(sizes)} disconnected components"
    return True, None


def is_valid(m: Morphology) -> bool:
    return validity_report(m)[0]


def require_valid(m: Morphology) -> None:
    ok, reason = validity_report(m)
    if not ok:
        raise InvalidMorphologyError(reason)


def random_morphology(h: int, w: int, rng: np.random.Generator) -> Morphology:
    """Sample a valid body: uniform cells, repaired to the largest component.

    Repaired grids that are still empty or actuator-free are resampled.
    """
    if h < 1 or w < 1:
        raise ValueError("grid dimensions must be >= 1")
    for _ in range(SAMPLER_MAX_TRIES):
        cells = rng.integers(0, materials.NUM_CODES, size=(h, w), dtype=np.int8)
        repaired = repair_to_largest_component(cells)
        candidate = Morphology(repaired)
        if is_valid(candidate):
            return candidate
    raise RuntimeError(f"failed to sample a valid {h}x{w} body in {SAMPLER_MAX_TRIES} tries")


def resample_cells(cells: np.ndarray, rng: np.random.Generator, rate: float = MUTATION_RATE) -> np.ndarray:
    """Raw per-cell mutation, before any repair.

    Each cell is independently resampled with probability `rate`, uniformly
    over the 4 codes different from its current one (empty counts as both a
    source and a target). Always consumes the same amount of rng stream
    regardless of which cells flip.
    """
    flips = rng.random(size=cells.shape) < rate
    offsets = rng.integers(1, materials.NUM_CODES, size=cells.shape, dtype=np.int8)
    resampled = (cells + offsets) % materials.NUM_CODES
    return np.where(flips, resampled, cells).astype(np.int8)


def mutate_morphology(
    m: Morphology, rng: np.random.Generator, rate: float = MUTATION_RATE
) -> tuple[Morphology, MorphologyDelta]:
    """Mutate a body and repair it; retry until valid, else return the parent.

    The whole mutation (fresh coin flips) is retried when repair leaves the
    body empty or actuator-free, up to MUTATION_MAX_TRIES attempts.
    """
    require_valid(m)
    for _ in range(MUTATION_MAX_TRIES):
        raw = resample_cells(m.cells, rng, rate)
        repaired = repair_to_largest_component(raw)
        candidate = Morphology(repaired)
        if is_valid(candidate):
            return candidate, _delta_between(m.cells, candidate.cells)
    return m, MorphologyDelta([])


def _delta_between(old: np.ndarray, new: np.ndarray) -> MorphologyDelta:
    rows, cols = np.nonzero(old != new)
    changed = [
        (int(r), int(c), int(old[r, c]), int(new[r, c]))
        for r, c in zip(rows.tolist(), cols.tolist())
    ]
    return MorphologyDelta(changed)


def morphology_distance(a: Morphology, b: Morphology) -> int:
    """Hamming distance over cells: count of positions with differing codes."""
    if a.cells.shape != b.cells.shape:
        raise ValueError(f"shape mismatch: {a.cells.shape} vs {b.cells.shape}")
    return int(np.count_nonzero(a.cells != b.cells))
