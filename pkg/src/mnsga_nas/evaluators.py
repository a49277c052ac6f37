"""Loss providers for the search: a closed-form surrogate and a supernet proxy.

Both are pure: the same genome always yields the same loss, so the engine
may evaluate offspring concurrently and cache results.
"""

from __future__ import annotations

import math
from typing import Protocol, Sequence

import numpy as np

from .search_space import Genome, SearchSpaceSpec, decode
from .weight_mapping import STEM_KEY, SupernetWeights, map_individual

PROXY_EPS = 1e-6


class Evaluator(Protocol):
    pure: bool
    descriptor: str

    def evaluate(self, genome: Genome) -> float: ...


class SurrogateEvaluator:
    """``loss = 1 / (1 + S)`` with ``S = sum_layers coef[stage] * log2(1 + expansion)``.

    Capacity always lowers the loss, while it raises MACs and parameters, so
    (loss, macs, params) is a genuine trade-off whose Pareto set can be
    enumerated on small spaces.
    """

    pure = True

    def __init__(self, space: SearchSpaceSpec, stage_coefficients: Sequence[float] = (1.0,) * 5):
        coefs = tuple(float(c) for c in stage_coefficients)
        if len(coefs) != 5 or any(not c > 0 for c in coefs):
            raise ValueError("need 5 positive stage coefficients")
        self.space = space
        self.stage_coefficients = coefs

    @property
    def descriptor(self) -> str:
        return f"surrogate(log2, coefficients={list(self.stage_coefficients)})"

    def capacity(self, genome: Genome) -> float:
        arch = decode(self.space, genome)
        return sum(
            self.stage_coefficients[stage - 2] * math.log2(1 + layer.op.expansion)
            for stage, layer in arch.layers()
        )

    def evaluate(self, genome: Genome) -> float:
        return 1.0 / (1.0 + self.capacity(genome))

    def predict(self, genomes: Sequence[Genome]) -> np.ndarray:
        return np.array([self.evaluate(g) for g in genomes])


def surrogate_loss(space: SearchSpaceSpec, genome: Genome,
                   stage_coefficients: Sequence[float] = (1.0,) * 5) -> float:
    return SurrogateEvaluator(space, stage_coefficients).evaluate(genome)


class ProxyEvaluator:
    """Loss from the share of supernet L1 mass kept by the mapped channels.

    ``score`` sums the L1 norms of the selected output channels over the
    slots an individual uses, divided by the total L1 mass of those slots;
    ``loss = 1 - score * (1 - eps)``.
    """

    pure = True

    def __init__(self, space: SearchSpaceSpec, supernet: SupernetWeights, eps: float = PROXY_EPS):
        self.space = space
        self.supernet = supernet
        self.eps = eps

    @property
    def descriptor(self) -> str:
        return f"proxy(supernet={self.supernet.space_hash}, seed={self.supernet.seed})"

    def score(self, genome: Genome) -> float:
        mapped = map_individual(self.supernet, self.space, genome)
        kept = total = 0.0
        for layer in mapped.layers:
            if layer.source == STEM_KEY:
                continue
            norms = self.supernet.norms(layer.source)
            kept += float(norms[list(layer.out_indices)].sum())
            total += float(norms.sum())
        return kept / total

    def evaluate(self, genome: Genome) -> float:
        return 1.0 - self.score(genome) * (1.0 - self.eps)

    def predict(self, genomes: Sequence[Genome]) -> np.ndarray:
        return np.array([self.evaluate(g) for g in genomes])


def proxy_loss(space: SearchSpaceSpec, genome: Genome, supernet: SupernetWeights) -> float:
    return ProxyEvaluator(space, supernet).evaluate(genome)
