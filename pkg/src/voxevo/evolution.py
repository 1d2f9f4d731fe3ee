"""Age-fitness Pareto evolutionary engine.

Selection treats each individual as a (maximize fitness, minimize age)
point. Every generation each survivor produces one mutated offspring
(inheriting its parent's age), one random age-0 individual is injected,
survivor ages increment, and truncation over Pareto layers keeps the
population at its fixed size. Offspring mutate either the body or the
controller with equal probability; for fixed controllers the controller
branch degenerates into a verbatim copy.

Randomness is drawn from per-individual streams derived from
(master seed, individual id), so evaluation order and thread counts can
never change a run's outcome, and a checkpoint only needs the seed and
the next id to resume exactly.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .control import ControllerGenome, init_controller, mutate_controller
from .morphology import Morphology, mutate_morphology, random_morphology

POPULATION_SIZE = 16
BODY_MUTATION_PROBABILITY = 0.5

ENVIRONMENTS = ("walker", "bridgewalker")
CONTROLLER_VARIANTS = ("modular", "fixed")


class ConfigError(ValueError):
    """A run configuration is malformed."""


@dataclass
class Individual:
    """One unit of selection: a body, a controller, an age, a score."""

    id: int
    morphology: Morphology
    controller: ControllerGenome
    age: int = 0
    fitness: float | None = None
    parent_id: int | None = None
    mutated_component: str | None = None  # "body" | "brain" for offspring

    def set_fitness(self, value: float) -> None:
        if self.fitness is not None:
            raise RuntimeError(f"individual {self.id} already evaluated; re-evaluation forbidden")
        if not np.isfinite(value):
            raise ValueError(f"fitness must be finite, got {value!r}")
        self.fitness = float(value)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "morphology": self.morphology.to_json(),
            "controller": self.controller.to_json(),
            "age": self.age,
            "fitness": self.fitness,
            "parent_id": self.parent_id,
            "mutated_component": self.mutated_component,
        }

    @staticmethod
    def from_json(data: dict) -> "Individual":
        ind = Individual(
            id=data["id"],
            morphology=Morphology.from_json(data["morphology"]),
            controller=ControllerGenome.from_json(data["controller"]),
            age=data["age"],
            parent_id=data.get("parent_id"),
            mutated_component=data.get("mutated_component"),
        )
        ind.fitness = data.get("fitness")
        return ind


@dataclass
class Population:
    members: list[Individual]
    generation: int
    rng_seed: int
    next_id: int


@dataclass(frozen=True)
class RunConfig:
    """One evolutionary run's settings."""

    environment: str = "walker"
    height: int = 5
    width: int = 5
    controller: str = "fixed"
    generations: int = 300
    population_size: int = POPULATION_SIZE
    seed: int = 0
    checkpoint_interval: int = 50
    output_dir: str | None = None
    freeze_body_path: str | None = None
    threads: int = 1

    def validate(self) -> None:
        if self.environment not in ENVIRONMENTS:
            raise ConfigError(f"environment must be one of {ENVIRONMENTS}, got {self.environment!r}")
        if self.controller not in CONTROLLER_VARIANTS:
            raise ConfigError(f"controller must be one of {CONTROLLER_VARIANTS}, got {self.controller!r}")
        if self.height < 1 or self.width < 1:
            raise ConfigError("morphology space must be at least 1x1")
        if self.generations < 0:
            raise ConfigError("generations must be >= 0")
        if self.population_size < 2:
            raise ConfigError("population size must be >= 2")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.checkpoint_interval < 1:
            raise ConfigError("checkpoint interval must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def setting_name(self) -> str:
        prefix = {"walker": "W", "bridgewalker": "B"}[self.environment]
        return f"{prefix}{self.height}"

    def fingerprint(self) -> str:
        payload = {
            "environment": self.environment,
            "height": self.height,
            "width": self.width,
            "controller": self.controller,
            "generations": self.generations,
            "population_size": self.population_size,
            "seed": self.seed,
            "checkpoint_interval": self.checkpoint_interval,
            "freeze_body": _frozen_body_digest(self.freeze_body_path),
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(data: dict) -> "RunConfig":
        known = {f for f in RunConfig.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return RunConfig(**data)


def _frozen_body_digest(path: str | None) -> str | None:
    if path is None:
        return None
    body = load_body_file(path)
    return hashlib.sha256(body.cells.tobytes()).hexdigest()


def load_body_file(path: str) -> Morphology:
    """Read a body from a bare morphology JSON or a champion wrapper."""
    with open(path) as fh:
        data = json.load(fh)
    if "morphology" in data:
        data = data["morphology"]
    return Morphology.from_json(data)


def individual_rng(master_seed: int, individual_id: int) -> np.random.Generator:
    """The private stream that fully determines one individual's randomness."""
    return np.random.default_rng([master_seed, individual_id])


def dominates(a: tuple[float, int], b: tuple[float, int]) -> bool:
    """Pareto dominance for (fitness, age): fitness up, age down, one strict."""
    fa, aa = a
    fb, ab = b
    return fa >= fb and aa <= ab and (fa > fb or aa < ab)


def pareto_layers(members: list[Individual]) -> list[list[Individual]]:
    """Peel non-dominated fronts until the pool is exhausted."""
    remaining = list(members)
    layers = []
    while remaining:
        front = [
            m
            for m in remaining
            if not any(
                dominates((o.fitness, o.age), (m.fitness, m.age)) for o in remaining if o is not m
            )
        ]
        layers.append(front)
        front_ids = {id(m) for m in front}
        remaining = [m for m in remaining if id(m) not in front_ids]
    return layers


def _truncation_key(ind: Individual):
    return (-ind.fitness, ind.age, ind.id)


def truncation_select(members: list[Individual], keep: int) -> list[Individual]:
    """Fill layer by layer; break ties inside the cut layer by fitness desc,
    then age asc, then id asc. Output is sorted by the same key."""
    chosen: list[Individual] = []
    for layer in pareto_layers(members):
        room = keep - len(chosen)
        if room <= 0:
            break
        if len(layer) <= room:
            chosen.extend(layer)
        else:
            chosen.extend(sorted(layer, key=_truncation_key)[:room])
    return sorted(chosen, key=_truncation_key)


def make_offspring(
    parent: Individual,
    rng: np.random.Generator,
    freeze_body: bool = False,
    *,
    child_id: int,
) -> Individual:
    """Mutate one component of the parent; the child inherits its age.

    The first draw from ``rng`` picks the component (body with probability
    0.5) unless freeze_body forces the controller branch. Fixed-controller
    parents drawing the controller branch yield an exact genotypic copy.
    """
    if parent.fitness is None:
        raise ValueError("parent must be evaluated before reproducing")
    mutate_body = (not freeze_body) and rng.random() < BODY_MUTATION_PROBABILITY
    if mutate_body:
        child_morph, _delta = mutate_morphology(parent.morphology, rng)
        child_ctrl = parent.controller
        component = "body"
    else:
        child_morph = parent.morphology
        child_ctrl = mutate_controller(parent.controller, rng)
        component = "brain"
    return Individual(
        id=child_id,
        morphology=child_morph,
        controller=child_ctrl,
        age=parent.age,
        parent_id=parent.id,
        mutated_component=component,
    )


def make_initial_population(config: RunConfig, frozen_body: Morphology | None = None) -> Population:
    members = []
    for i in range(config.population_size):
        rng = individual_rng(config.seed, i)
        if frozen_body is not None:
            morph = frozen_body
        else:
            morph = random_morphology(config.height, config.width, rng)
        ctrl = init_controller(config.controller, rng)
        members.append(Individual(id=i, morphology=morph, controller=ctrl, age=0))
    return Population(members=members, generation=0, rng_seed=config.seed, next_id=config.population_size)


def _evaluate_members(members: list[Individual], evaluator) -> None:
    todo = [m for m in members if m.fitness is None]
    if not todo:
        return
    fits = evaluator.fitness_many([(m.morphology, m.controller) for m in todo])
    for m, fit in zip(todo, fits):
        m.set_fitness(fit)


def advance_generation(
    pop: Population,
    evaluator,
    config: RunConfig,
    frozen_body: Morphology | None = None,
) -> Population:
    """One full AFPO generation: reproduce, inject, evaluate, age, select."""
    survivors = pop.members
    next_id = pop.next_id

    children = []
    for parent in survivors:
        rng = individual_rng(pop.rng_seed, next_id)
        children.append(
            make_offspring(parent, rng, freeze_body=frozen_body is not None, child_id=next_id)
        )
        next_id += 1

    rng = individual_rng(pop.rng_seed, next_id)
    if frozen_body is not None:
        injected_morph = frozen_body
    else:
        injected_morph = random_morphology(config.height, config.width, rng)
    injectee = Individual(
        id=next_id,
        morphology=injected_morph,
        controller=init_controller(config.controller, rng),
        age=0,
    )
    next_id += 1

    _evaluate_members(children + [injectee], evaluator)
    for survivor in survivors:
        survivor.age += 1

    pool = survivors + children + [injectee]
    selected = truncation_select(pool, config.population_size)
    return Population(
        members=selected,
        generation=pop.generation + 1,
        rng_seed=pop.rng_seed,
        next_id=next_id,
    )


@dataclass
class GenerationStats:
    generation: int
    best_fitness: float
    mean_fitness: float
    best_age: int
    champion_id: int

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    """Everything one evolutionary run produced."""

    config: RunConfig
    fingerprint: str
    seed: int
    stats: list[GenerationStats]
    champion: Individual          # highest fitness ever evaluated
    snapshots: list[tuple[int, Individual]]
    final_population: Population

    def best_curve(self) -> np.ndarray:
        return np.array([s.best_fitness for s in self.stats])

    def best_ever_curve(self) -> np.ndarray:
        return np.maximum.accumulate(self.best_curve())

    def write_generation_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("generation,best_fitness,mean_fitness,best_age,champion_id\n")
            for s in self.stats:
                fh.write(
                    f"{s.generation},{s.best_fitness!r},{s.mean_fitness!r},{s.best_age},{s.champion_id}\n"
                )


def _population_stats(pop: Population, champion: Individual) -> GenerationStats:
    best = min(pop.members, key=_truncation_key)
    mean = float(np.mean([m.fitness for m in pop.members]))
    return GenerationStats(
        generation=pop.generation,
        best_fitness=best.fitness,
        mean_fitness=mean,
        best_age=best.age,
        champion_id=champion.id,
    )


def _update_champion(champion: Individual | None, candidates: list[Individual]) -> Individual:
    for cand in candidates:
        if champion is None or cand.fitness > champion.fitness:
            champion = cand
    return champion


def save_checkpoint(path, pop: Population, champion: Individual, stats, snapshots, config: RunConfig) -> None:
    payload = {
        "generation": pop.generation,
        "rng_seed": pop.rng_seed,
        "next_id": pop.next_id,
        "members": [m.to_json() for m in pop.members],
        "champion": champion.to_json(),
        "stats": [s.to_json() for s in stats],
        "snapshots": [[g, ind.to_json()] for g, ind in snapshots],
        "config": config.to_json(),
        "fingerprint": config.fingerprint(),
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    payload["members"] = [Individual.from_json(m) for m in payload["members"]]
    payload["champion"] = Individual.from_json(payload["champion"])
    payload["stats"] = [GenerationStats(**s) for s in payload["stats"]]
    payload["snapshots"] = [(g, Individual.from_json(ind)) for g, ind in payload["snapshots"]]
    payload["config"] = RunConfig.from_json(payload["config"])
    return payload


def evolve(
    config: RunConfig,
    evaluator=None,
    *,
    frozen_body: Morphology | None = None,
    checkpoint_path=None,
    resume: bool = False,
    progress=None,
) -> RunResult:
    """Run the configured number of generations and return the result.

    The champion is the best individual ever evaluated, not merely the
    final population's best. With ``checkpoint_path`` set, state is saved
    every checkpoint_interval generations and an interrupted run can be
    continued with ``resume=True``.
    """
    config.validate()
    if evaluator is None:
        from .tasks import EpisodeEvaluator, terrain_by_name

        terrain = terrain_by_name(config.environment, (config.height, config.width))
        evaluator = EpisodeEvaluator(terrain, threads=config.threads)
    if frozen_body is None and config.freeze_body_path is not None:
        frozen_body = load_body_file(config.freeze_body_path)

    stats: list[GenerationStats] = []
    snapshots: list[tuple[int, Individual]] = []

    if resume and checkpoint_path is not None and os.path.exists(checkpoint_path):
        saved = load_checkpoint(checkpoint_path)
        if saved["fingerprint"] != config.fingerprint():
            raise ConfigError("checkpoint belongs to a different configuration")
        pop = Population(
            members=saved["members"],
            generation=saved["generation"],
            rng_seed=saved["rng_seed"],
            next_id=saved["next_id"],
        )
        champion = saved["champion"]
        stats = saved["stats"]
        snapshots = saved["snapshots"]
    else:
        pop = make_initial_population(config, frozen_body)
        _evaluate_members(pop.members, evaluator)
        champion = _update_champion(None, pop.members)
        stats.append(_population_stats(pop, champion))

    while pop.generation < config.generations:
        pop = advance_generation(pop, evaluator, config, frozen_body)
        champion = _update_champion(champion, pop.members)
        stats.append(_population_stats(pop, champion))
        at_interval = pop.generation % config.checkpoint_interval == 0
        if at_interval or pop.generation == config.generations:
            snapshots.append((pop.generation, copy.deepcopy(champion)))
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, pop, champion, stats, snapshots, config)
        if progress is not None:
            progress(pop, champion)

    return RunResult(
        config=config,
        fingerprint=config.fingerprint(),
        seed=config.seed,
        stats=stats,
        champion=champion,
        snapshots=snapshots,
        final_population=pop,
    )
