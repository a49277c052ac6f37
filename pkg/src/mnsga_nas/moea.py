"""NSGA-II building blocks shared by the MNSGA engine and the plain baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .search_space import Genome, SearchSpaceSpec, validate


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """Pareto dominance for minimisation."""
    if len(a) != len(b):
        raise ValueError(f"objective length mismatch: {len(a)} vs {len(b)}")
    strictly = False
    for x, y in zip(a, b):
        if x > y:
            return False
        if x < y:
            strictly = True
    return strictly


def fast_nondominated_sort(points) -> list[list[int]]:
    """Deb's fast non-dominated sort; returns fronts as ascending index lists."""
    F = np.asarray(points, dtype=float)
    if F.ndim != 2:
        raise ValueError("points must be a 2-D array of objective vectors")
    n = len(F)
    if n == 0:
        return []
    if not np.all(np.isfinite(F)):
        raise ValueError("objective vectors must be finite")
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    counts = dom.sum(axis=0)
    fronts = []
    current = [i for i in range(n) if counts[i] == 0]
    while current:
        fronts.append(current)
        nxt = []
        for i in current:
            for j in np.flatnonzero(dom[i]):
                counts[j] -= 1
                if counts[j] == 0:
                    nxt.append(int(j))
        current = sorted(nxt)
    return fronts


def crowding_distance(points) -> np.ndarray:
    """Crowding distance of the members of one front.

    Boundary members of every objective get ``inf``; an objective with zero
    range adds nothing to interior members.
    """
    F = np.asarray(points, dtype=float)
    if F.ndim != 2 or len(F) == 0:
        raise ValueError("crowding distance needs a non-empty front")
    n, m = F.shape
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = math.inf
        return dist
    for k in range(m):
        order = np.argsort(F[:, k], kind="stable")
        col = F[order, k]
        dist[order[0]] = dist[order[-1]] = math.inf
        span = col[-1] - col[0]
        if span <= 0:
            continue
        dist[order[1:-1]] += (col[2:] - col[:-2]) / span
    return dist


@dataclass
class Individual:
    genome: Genome
    id: int
    macs: int
    params: int
    loss: float | None = None
    generation: int = 0
    rank: int | None = None
    crowding: float | None = None

    @property
    def evaluated(self) -> bool:
        return self.loss is not None

    @property
    def cheap_objectives(self) -> tuple[float, float]:
        return (float(self.macs), float(self.params))

    @property
    def objectives(self) -> tuple[float, float, float]:
        if self.loss is None:
            raise ValueError(f"individual {self.id} has no loss yet")
        return (self.loss, float(self.macs), float(self.params))


@dataclass
class Population:
    members: list[Individual] = field(default_factory=list)
    generation: int = 0

    def __post_init__(self):
        ids = [m.id for m in self.members]
        if len(set(ids)) != len(ids):
            raise ValueError("population member ids must be unique")

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)


def rank_members(
    members: Sequence[Individual], key: Callable[[Individual], Sequence[float]]
) -> list[list[int]]:
    """Sort ``members`` on ``key`` and write rank (1-based) and crowding."""
    points = [key(m) for m in members]
    fronts = fast_nondominated_sort(points)
    for r, front in enumerate(fronts, start=1):
        cd = crowding_distance([points[i] for i in front])
        for i, d in zip(front, cd):
            members[i].rank = r
            members[i].crowding = float(d)
    return fronts


def select_by_rank(
    members: Sequence[Individual], n: int, key: Callable[[Individual], Sequence[float]]
) -> list[Individual]:
    """Front-by-front survival, truncating the split front by descending crowding."""
    fronts = rank_members(members, key)
    chosen: list[Individual] = []
    for front in fronts:
        if len(chosen) + len(front) <= n:
            chosen.extend(members[i] for i in front)
            continue
        rest = sorted(front, key=lambda i: -members[i].crowding)
        chosen.extend(members[i] for i in rest[: n - len(chosen)])
        break
    return chosen


def binary_tournament(members: Sequence[Individual], rng: np.random.Generator) -> Individual:
    if len(members) < 2:
        raise ValueError("tournament needs at least two members")
    i, j = rng.choice(len(members), size=2, replace=False)
    a, b = members[i], members[j]
    if a.rank is None or b.rank is None or a.crowding is None or b.crowding is None:
        raise ValueError("tournament needs ranked members")
    if a.rank != b.rank:
        return a if a.rank < b.rank else b
    if a.crowding != b.crowding:
        return a if a.crowding > b.crowding else b
    return a if rng.random() < 0.5 else b


def _check_same_space(space: SearchSpaceSpec, *genomes: Genome) -> None:
    for g in genomes:
        validate(space, g)  # raises GenomeStructureError on shape mismatch


def crossover(
    space: SearchSpaceSpec, p1: Genome, p2: Genome, mu: float, rng: np.random.Generator
) -> Genome:
    """Uniform crossover applied with probability ``mu``; otherwise a copy of ``p1``."""
    if not 0.0 <= mu <= 1.0:
        raise ValueError("crossover probability must lie in [0, 1]")
    _check_same_space(space, p1, p2)
    if rng.random() >= mu:
        return p1
    ops = tuple(
        tuple(a if rng.random() < 0.5 else b for a, b in zip(s1, s2))
        for s1, s2 in zip(p1.op_genes, p2.op_genes)
    )
    chans = tuple(a if rng.random() < 0.5 else b for a, b in zip(p1.channel_genes, p2.channel_genes))
    return Genome(ops, chans)


def mutate(space: SearchSpaceSpec, g: Genome, nu: float, rng: np.random.Generator) -> Genome:
    """Resample each gene with probability ``nu`` from its allowed alleles."""
    if not 0.0 <= nu <= 1.0:
        raise ValueError("mutation probability must lie in [0, 1]")
    first, every = space.layer_ops, space.ops
    ops = []
    for stage_genes in g.op_genes:
        genes = list(stage_genes)
        for k in range(len(genes)):
            if rng.random() < nu:
                menu = first if k == 0 else every
                genes[k] = menu[rng.integers(len(menu))]
        ops.append(tuple(genes))
    chans = list(g.channel_genes)
    for k, stage in enumerate(space.searched):
        if rng.random() < nu:
            chans[k] = int(rng.integers(len(stage.allowed_channels)))
    return Genome(tuple(ops), tuple(chans))
