"""Two-stage constrained non-dominated sorting search and the NSGA-II baseline.

Each MNSGA generation:

1. breed offspring scored only on the analytic costs (MACs, params), keep
   those inside the ``g1``/``g2`` box, and run until the trial budget is
   spent and at least N children were admitted;
2. select N survivors from ``P + Q1`` on (MACs, params);
3. breed N children from the survivors and evaluate their loss;
4. select N from survivors + children on (loss, MACs, params).

Every random draw comes from a stream keyed by (seed, generation, phase,
offspring index), so results do not depend on evaluation order.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cost_model import genome_cost, space_cost_bounds
from .moea import (
    Individual,
    binary_tournament,
    crossover,
    dominates,
    mutate,
    rank_members,
    select_by_rank,
)
from .search_space import Genome, SearchSpaceSpec, random_genome

log = logging.getLogger(__name__)

TRIAL_CAP_FACTOR = 32
_INIT, _STAGE1, _STAGE2 = 0, 1, 2


class InfeasibleConstraintsError(RuntimeError):
    """No offspring satisfied the constraints within the trial cap."""


class EvaluationError(RuntimeError):
    def __init__(self, individual_id: int, cause: BaseException):
        super().__init__(f"evaluation of individual {individual_id} failed: {cause!r}")
        self.individual_id = individual_id


@dataclass(frozen=True)
class MnsgaConfig:
    population_size: int = 24
    generations: int = 30
    crossover_prob: float = 0.9
    mutation_prob: float = 0.1
    g1_max_macs: float = math.inf
    g2_max_params: float = math.inf
    stage1_trial_budget: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        for name in ("crossover_prob", "mutation_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not (self.g1_max_macs > 0 and self.g2_max_params > 0):
            raise ValueError("constraint bounds must be positive")
        if self.stage1_trial_budget is None:
            object.__setattr__(self, "stage1_trial_budget", 4 * self.population_size)
        if self.stage1_trial_budget < self.population_size:
            raise ValueError("stage1_trial_budget must be >= population_size")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def trial_cap(self) -> int:
        return max(TRIAL_CAP_FACTOR * self.population_size, self.stage1_trial_budget)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("g1_max_macs", "g2_max_params"):
            if math.isinf(d[k]):
                d[k] = None
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "MnsgaConfig":
        data = dict(data)
        for k in ("g1_max_macs", "g2_max_params"):
            if data.get(k) is None:
                data[k] = math.inf
        return cls(**data)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def hypervolume(points: Sequence[Sequence[float]], ref: Sequence[float]) -> float:
    """Exact hypervolume (minimisation) of 2- or 3-objective points w.r.t. ``ref``.

    Points not strictly better than ``ref`` in every objective are ignored.
    """
    ref = tuple(float(r) for r in ref)
    pts = [tuple(map(float, p)) for p in points if all(x < r for x, r in zip(p, ref))]
    if not pts:
        return 0.0
    if len(ref) == 2:
        return _hv2d(pts, ref)
    if len(ref) != 3:
        raise ValueError("hypervolume supports 2 or 3 objectives")
    pts.sort()
    total = 0.0
    for i, p in enumerate(pts):
        nxt = pts[i + 1][0] if i + 1 < len(pts) else ref[0]
        width = nxt - p[0]
        if width > 0:
            total += width * _hv2d([q[1:] for q in pts[: i + 1]], ref[1:])
    return total


def _hv2d(pts, ref) -> float:
    area, best = 0.0, ref[1]
    for x, y in sorted(pts):
        if y < best:
            area += (ref[0] - x) * (best - y)
            best = y
    return area


@dataclass(frozen=True)
class ArchiveEntry:
    genome: Genome
    objectives: tuple[float, float, float]
    generation: int


class ParetoArchive:
    """Non-dominated set of every fully evaluated individual seen so far."""

    def __init__(self, entries: Sequence[ArchiveEntry] = ()):
        self._entries: list[ArchiveEntry] = []
        for e in entries:
            self.add(e.genome, e.objectives, e.generation)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __contains__(self, genome: Genome) -> bool:
        return any(e.genome == genome for e in self._entries)

    @property
    def entries(self) -> list[ArchiveEntry]:
        return list(self._entries)

    def add(self, genome: Genome, objectives: Sequence[float], generation: int) -> bool:
        objectives = tuple(float(x) for x in objectives)
        for e in self._entries:
            if e.genome == genome or dominates(e.objectives, objectives):
                return False
        self._entries = [e for e in self._entries if not dominates(objectives, e.objectives)]
        self._entries.append(ArchiveEntry(genome, objectives, generation))
        return True

    def objectives(self) -> np.ndarray:
        return np.array([e.objectives for e in self._entries], dtype=float).reshape(-1, 3)

    def hypervolume(self, scale: Sequence[float], ref: Sequence[float]) -> float:
        pts = self.objectives() / np.asarray(scale, dtype=float)
        return hypervolume(pts.tolist(), ref)


@dataclass
class RunState:
    population: list[Individual]
    generation: int
    archive: ParetoArchive
    next_id: int
    metrics: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)


class Stage1Result(list):
    """Admitted stage-1 offspring plus loop bookkeeping."""

    trials: int = 0
    padded: int = 0


class MnsgaEngine:
    """Runs MNSGA (``algorithm="mnsga"``) or plain NSGA-II (``"nsga2"``)."""

    def __init__(
        self,
        config: MnsgaConfig,
        space: SearchSpaceSpec,
        evaluator,
        algorithm: str = "mnsga",
        n_jobs: int = 1,
        on_admit: Callable[[Individual], None] | None = None,
    ):
        if algorithm not in ("mnsga", "nsga2"):
            raise ValueError(f"unknown algorithm {algorithm!r}")
        if n_jobs > 1 and not getattr(evaluator, "pure", False):
            raise ValueError("concurrent evaluation requires a pure evaluator")
        self.config = config
        self.space = space
        self.evaluator = evaluator
        self.algorithm = algorithm
        self.n_jobs = n_jobs
        self.on_admit = on_admit
        self._cost_cache: dict[Genome, tuple[int, int]] = {}
        self._loss_cache: dict[Genome, float] = {}
        (self.min_cost, self.max_cost) = space_cost_bounds(space)
        self.scale = (
            1.0,
            config.g1_max_macs if math.isfinite(config.g1_max_macs) else float(self.max_cost[0]),
            config.g2_max_params if math.isfinite(config.g2_max_params) else float(self.max_cost[1]),
        )
        self.reference_point = (1.0, 1.1, 1.1)

    # -- helpers -----------------------------------------------------------
    def _rng(self, generation: int, phase: int, index: int) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, generation, phase, index])

    def cost(self, genome: Genome) -> tuple[int, int]:
        if genome not in self._cost_cache:
            self._cost_cache[genome] = genome_cost(self.space, genome)
        return self._cost_cache[genome]

    def feasible(self, macs: float, params: float) -> bool:
        return macs <= self.config.g1_max_macs and params <= self.config.g2_max_params

    def _violation(self, macs: float, params: float) -> float:
        return (max(0.0, macs / self.config.g1_max_macs - 1.0)
                + max(0.0, params / self.config.g2_max_params - 1.0))

    def _new(self, state: RunState, genome: Genome, generation: int) -> Individual:
        macs, params = self.cost(genome)
        ind = Individual(genome, state.next_id, macs, params, generation=generation)
        state.next_id += 1
        return ind

    def _evaluate(self, members: Sequence[Individual]) -> int:
        """Fill in missing losses; returns the number of evaluations requested."""
        pending = [m for m in members if m.loss is None]
        todo = list(dict.fromkeys(m.genome for m in pending if m.genome not in self._loss_cache))
        owner = {}
        for m in pending:
            owner.setdefault(m.genome, m.id)

        def run(g):
            try:
                loss = float(self.evaluator.evaluate(g))
            except Exception as exc:
                raise EvaluationError(owner[g], exc) from exc
            if not (math.isfinite(loss) and loss > 0):
                raise EvaluationError(owner[g], ValueError(f"loss {loss} must be finite and positive"))
            return loss

        if self.n_jobs > 1 and len(todo) > 1:
            with ThreadPoolExecutor(self.n_jobs) as pool:
                losses = list(pool.map(run, todo))
        else:
            losses = [run(g) for g in todo]
        self._loss_cache.update(zip(todo, losses))
        for m in pending:
            m.loss = self._loss_cache[m.genome]
        return len(pending)

    def _breed(self, parents: Sequence[Individual], rng: np.random.Generator) -> Genome:
        p1 = binary_tournament(parents, rng)
        p2 = binary_tournament(parents, rng)
        child = crossover(self.space, p1.genome, p2.genome, self.config.crossover_prob, rng)
        return mutate(self.space, child, self.config.mutation_prob, rng)

    @staticmethod
    def _full(m: Individual):
        return m.objectives

    @staticmethod
    def _cheap(m: Individual):
        return m.cheap_objectives

    def _record(self, state: RunState, **counters) -> dict:
        pop = state.population
        front = [m for m in pop if m.rank == 1] or pop
        row = {
            "generation": state.generation,
            "archive_size": len(state.archive),
            "hypervolume": state.archive.hypervolume(self.scale, self.reference_point),
            "best_loss": min(m.loss for m in pop),
            "min_macs": min(m.macs for m in front),
        }
        state.metrics.append(row)
        state.events.append({"event": "generation", **row, **counters})
        return row

    # -- algorithm steps ---------------------------------------------------
    def initialize(self) -> RunState:
        n = self.config.population_size
        state = RunState([], 0, ParetoArchive(), 0)
        state.population = [
            self._new(state, random_genome(self.space, self._rng(0, _INIT, i)), 0) for i in range(n)
        ]
        evals = self._evaluate(state.population)
        fronts = rank_members(state.population, self._full)
        for i in fronts[0]:
            m = state.population[i]
            state.archive.add(m.genome, m.objectives, 0)
        self._record(state, offspring_evals=evals, lazy_evals=0)
        return state

    def stage1_offspring(self, state: RunState, generation: int) -> Stage1Result:
        cfg, n = self.config, self.config.population_size
        q1 = Stage1Result()
        rejected = []
        i = 0
        while (i < cfg.stage1_trial_budget or len(q1) < n) and i < cfg.trial_cap:
            child = self._new(state, self._breed(state.population, self._rng(generation, _STAGE1, i)),
                              generation)
            i += 1
            if self.feasible(child.macs, child.params):
                if self.on_admit is not None:
                    self.on_admit(child)
                q1.append(child)
            else:
                rejected.append(child)
        q1.trials = i
        if not q1:
            raise InfeasibleConstraintsError(self._infeasibility_message(i))
        if len(q1) < n:
            rejected.sort(key=lambda m: (self._violation(m.macs, m.params), m.id))
            pad = rejected[: n - len(q1)]
            q1.extend(pad)
            q1.padded = len(pad)
            state.events.append({"event": "degraded_stage1", "generation": generation,
                                 "admitted": len(q1) - len(pad), "padded": len(pad)})
            log.warning("generation %d: only %d feasible offspring, padded %d",
                        generation, len(q1) - len(pad), len(pad))
        return q1

    def _infeasibility_message(self, trials: int) -> str:
        parts = []
        (min_macs, min_params) = self.min_cost
        if min_macs > self.config.g1_max_macs:
            parts.append(f"g1: max_macs={self.config.g1_max_macs:g} is below the space minimum {min_macs}")
        if min_params > self.config.g2_max_params:
            parts.append(f"g2: max_params={self.config.g2_max_params:g} is below the space minimum {min_params}")
        if not parts:
            parts.append(f"no feasible offspring for g1 (macs <= {self.config.g1_max_macs:g}) and "
                         f"g2 (params <= {self.config.g2_max_params:g})")
        return f"infeasible constraints after {trials} trials: " + "; ".join(parts)

    def stage1_selection(self, population: Sequence[Individual], q1: Sequence[Individual]) -> list[Individual]:
        return select_by_rank(list(population) + list(q1), self.config.population_size, self._cheap)

    def stage2_offspring(self, state: RunState, parents: Sequence[Individual], generation: int) -> list[Individual]:
        q = [
            self._new(state, self._breed(parents, self._rng(generation, _STAGE2, i)), generation)
            for i in range(self.config.population_size)
        ]
        self._evaluate(q)
        return q

    def stage2_selection(self, state: RunState, parents: Sequence[Individual],
                         offspring: Sequence[Individual], generation: int) -> tuple[list[Individual], int]:
        lazy = self._evaluate(parents)
        union = list(parents) + list(offspring)
        survivors = select_by_rank(union, self.config.population_size, self._full)
        for m in union:
            state.archive.add(m.genome, m.objectives, generation)
        return survivors, lazy

    def step(self, state: RunState) -> dict:
        t = state.generation + 1
        n = self.config.population_size
        if self.algorithm == "mnsga":
            q1 = self.stage1_offspring(state, t)
            parents = self.stage1_selection(state.population, q1)
            q = self.stage2_offspring(state, parents, t)
            survivors, lazy = self.stage2_selection(state, parents, q, t)
            counters = {"stage1_trials": q1.trials, "stage1_admitted": len(q1) - q1.padded,
                        "stage1_padded": q1.padded, "offspring_evals": n, "lazy_evals": lazy}
        else:
            q = self.stage2_offspring(state, state.population, t)
            survivors, lazy = self.stage2_selection(state, state.population, q, t)
            counters = {"offspring_evals": n, "lazy_evals": lazy}
        state.population = survivors
        state.generation = t
        return self._record(state, **counters)

    def run(
        self,
        state: RunState | None = None,
        on_generation: Callable[[RunState], None] | None = None,
        on_failure: Callable[[RunState], None] | None = None,
    ) -> RunState:
        if state is None:
            state = self.initialize()
            if on_generation:
                on_generation(state)
        else:
            self._loss_cache.update((m.genome, m.loss) for m in state.population if m.loss is not None)
        try:
            while state.generation < self.config.generations:
                self.step(state)
                if on_generation:
                    on_generation(state)
        except BaseException:
            if on_failure:
                on_failure(state)
            raise
        return state


def run(config: MnsgaConfig, space: SearchSpaceSpec, evaluator, **kwargs) -> RunState:
    return MnsgaEngine(config, space, evaluator, algorithm="mnsga", **kwargs).run()


def run_nsga2_baseline(config: MnsgaConfig, space: SearchSpaceSpec, evaluator, **kwargs) -> RunState:
    return MnsgaEngine(config, space, evaluator, algorithm="nsga2", **kwargs).run()
