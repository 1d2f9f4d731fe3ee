"""Locomotion episodes and the scalar fitness they produce.

An episode drops the robot on the course, queries its controller every
5th simulation step, and runs for at most T_MAX steps or until the
robot's center of mass crosses the finish line. Fitness is x-displacement
plus a completion bonus, minus a per-step time penalty, shifted by a
constant offset that exactly cancels the maximum possible penalty.
"""

from __future__ import annotations

import csv
import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import sim_core
from .control import ControllerGenome, compute_actions
from .morphology import Morphology, require_valid
from .sim_core import DT, STEPS_PER_ACTION, SimulationDiverged, build_world, set_actuation_targets
from .terrain import (  # re-exported task surface
    TerrainSpec,
    make_bridge_terrain,
    make_flat_terrain,
    terrain_by_name,
)

__all__ = [
    "T_MAX",
    "EpisodeResult",
    "EpisodeEvaluator",
    "compute_fitness",
    "run_episode",
    "TerrainSpec",
    "make_bridge_terrain",
    "make_flat_terrain",
    "terrain_by_name",
]

T_MAX = 500
COMPLETION_BONUS = 1.0
STEP_PENALTY = 0.01
REWARD_OFFSET = 5.0  # = STEP_PENALTY * T_MAX, cancels the worst-case penalty


@dataclass(frozen=True)
class EpisodeResult:
    delta_px: float        # center-of-mass x displacement
    finished: bool         # reached the finish line
    steps_used: int        # simulation steps consumed
    fitness: float
    diverged: bool = False

    def to_json(self) -> dict:
        return {
            "delta_px": self.delta_px,
            "finished": self.finished,
            "steps_used": self.steps_used,
            "fitness": self.fitness,
            "diverged": self.diverged,
        }


def compute_fitness(
    delta_px: float,
    finished: bool,
    steps_used: int,
    *,
    completion_bonus: float = COMPLETION_BONUS,
    step_penalty: float = STEP_PENALTY,
    offset: float = REWARD_OFFSET,
    max_steps: int = T_MAX,
) -> float:
    """Affine episode score; defaults: displacement + done + 5 - 0.01*steps.

    The offset and the penalty are combined first so that the worst-case
    penalty cancels the offset exactly (a full 500-step episode with no
    displacement scores 0.0, not an ulp away from it).
    """
    if not 0 <= steps_used <= max_steps:
        raise ValueError(f"steps_used must lie in [0, {max_steps}], got {steps_used}")
    bonus = completion_bonus if finished else 0.0
    return delta_px + bonus + (offset - step_penalty * steps_used)


def run_episode(
    morphology: Morphology,
    controller: ControllerGenome,
    terrain: TerrainSpec,
    seed: int = 0,
    *,
    max_steps: int = T_MAX,
    telemetry_path=None,
) -> EpisodeResult:
    """Run one deterministic locomotion episode.

    ``seed`` is accepted for interface stability; the engine itself is
    noise-free, so identical inputs always produce identical results.
    A diverged simulation scores as unfinished with displacement taken at
    the last valid step and the full time penalty applied.
    """
    require_valid(morphology)
    state = build_world(morphology, terrain)
    start_x = state.robot_com_x()
    last_x = start_x
    finished = False
    diverged = False
    steps_used = max_steps
    telemetry_rows = []

    for t in range(max_steps):
        if t % STEPS_PER_ACTION == 0:
            k = t // STEPS_PER_ACTION
            actions = compute_actions(controller, state, k)
            set_actuation_targets(state, actions)
            if telemetry_path is not None:
                com = state.robot_center_of_mass()
                telemetry_rows.append([state.sim_time, com[0], com[1], *actions.tolist()])
        try:
            sim_core.step(state, DT)
        except SimulationDiverged:
            diverged = True
            steps_used = max_steps
            break
        last_x = state.robot_com_x()
        if last_x >= terrain.finish_x:
            finished = True
            steps_used = state.sim_time
            break

    delta = last_x - start_x
    fitness = compute_fitness(delta, finished, steps_used)
    result = EpisodeResult(delta, finished, steps_used, fitness, diverged)
    if telemetry_path is not None:
        _write_telemetry(telemetry_path, state, telemetry_rows, result)
    return result


def _write_telemetry(path, state, rows, result: EpisodeResult) -> None:
    n_act = len(state.actuator_cells)
    header = ["sim_time", "com_x", "com_y"] + [f"action_{r}_{c}" for r, c in state.actuator_cells]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[0]] + [repr(v) for v in row[1:]])
        writer.writerow([])
        writer.writerow(["clamped_actions", state.clamped_actions] + [""] * max(0, n_act))
        writer.writerow(["fitness", repr(result.fitness)] + [""] * max(0, n_act))


def _genome_key(morphology: Morphology, controller: ControllerGenome) -> bytes:
    digest = hashlib.blake2b(digest_size=16)
    digest.update(np.asarray(morphology.cells.shape, dtype=np.int64).tobytes())
    digest.update(morphology.cells.tobytes())
    digest.update(controller.variant.encode())
    digest.update(controller.params.tobytes())
    return digest.digest()


class EpisodeEvaluator:
    """Scores (morphology, controller) pairs on one terrain.

    Deterministic episodes make caching exact: identical genomes share a
    fitness without re-simulation. Batches may be evaluated by a thread
    pool; results never depend on the thread count. An unexpected failure
    inside an episode scores like a divergence (no displacement, full
    time penalty) instead of aborting the batch.
    """

    def __init__(self, terrain: TerrainSpec, *, max_steps: int = T_MAX, cache: bool = True, threads: int = 1):
        self.terrain = terrain
        self.max_steps = max_steps
        self.threads = max(1, int(threads))
        self._cache: dict[bytes, float] | None = {} if cache else None
        self.episodes_run = 0
        self.cache_hits = 0
        self.failures = 0

    def episode(self, morphology: Morphology, controller: ControllerGenome) -> EpisodeResult:
        self.episodes_run += 1
        return run_episode(morphology, controller, self.terrain, max_steps=self.max_steps)

    def _safe_fitness(self, pair) -> float:
        morphology, controller = pair
        try:
            return self.episode(morphology, controller).fitness
        except Exception:
            self.failures += 1
            return compute_fitness(0.0, False, self.max_steps, max_steps=self.max_steps)

    def __call__(self, morphology: Morphology, controller: ControllerGenome) -> float:
        return self.fitness_many([(morphology, controller)])[0]

    def fitness_many(self, pairs) -> list[float]:
        pairs = list(pairs)
        if self._cache is None:
            return self._run_batch(pairs)
        keys = [_genome_key(m, c) for m, c in pairs]
        todo: dict[bytes, tuple] = {}
        for key, pair in zip(keys, pairs):
            if key not in self._cache and key not in todo:
                todo[key] = pair
        self.cache_hits += len(keys) - len(todo)
        fresh = self._run_batch(list(todo.values()))
        for key, fit in zip(todo.keys(), fresh):
            self._cache[key] = fit
        return [self._cache[key] for key in keys]

    def _run_batch(self, pairs) -> list[float]:
        if not pairs:
            return []
        if self.threads == 1 or len(pairs) == 1:
            return [self._safe_fitness(p) for p in pairs]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(self._safe_fitness, pairs))
