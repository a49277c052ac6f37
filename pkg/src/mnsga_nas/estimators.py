"""scikit-learn style front ends: a search estimator and a cost transformer."""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .cost_model import genome_cost
from .engine import MnsgaConfig, MnsgaEngine
from .evaluators import SurrogateEvaluator
from .search_space import Genome, SearchSpaceSpec, default_space


def check_genomes(X, space: SearchSpaceSpec) -> list[Genome]:
    """Accept genomes or their dict form; reject anything else."""
    if isinstance(X, (Genome, dict)):
        raise TypeError("expected a sequence of genomes, got a single genome")
    out = []
    for x in X:
        g = Genome.from_dict(x) if isinstance(x, dict) else x
        if not isinstance(g, Genome):
            raise TypeError(f"expected Genome or dict, got {type(x).__name__}")
        out.append(g)
    return out


class CostTransformer(TransformerMixin, BaseEstimator):
    """Map genomes to an ``(n, 2)`` array of (MACs, params)."""

    def __init__(self, space=None):
        self.space = space

    def fit(self, X=None, y=None):
        self.space_ = self.space or default_space()
        return self

    def transform(self, X):
        check_is_fitted(self, "space_")
        genomes = check_genomes(X, self.space_)
        return np.array([genome_cost(self.space_, g) for g in genomes], dtype=np.int64).reshape(-1, 2)


class MnsgaSearch(BaseEstimator):
    """Search estimator; ``fit`` runs the evolution and stores the results.

    Fitted attributes: ``population_``, ``archive_``, ``metrics_``,
    ``pareto_genomes_`` and ``pareto_objectives_`` (loss, MACs, params).
    """

    def __init__(self, population_size=24, generations=30, crossover_prob=0.9, mutation_prob=0.1,
                 g1_max_macs=math.inf, g2_max_params=math.inf, stage1_trial_budget=None, seed=0,
                 space=None, evaluator=None, algorithm="mnsga", n_jobs=1):
        self.population_size = population_size
        self.generations = generations
        self.crossover_prob = crossover_prob
        self.mutation_prob = mutation_prob
        self.g1_max_macs = g1_max_macs
        self.g2_max_params = g2_max_params
        self.stage1_trial_budget = stage1_trial_budget
        self.seed = seed
        self.space = space
        self.evaluator = evaluator
        self.algorithm = algorithm
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        space = self.space or default_space()
        evaluator = self.evaluator or SurrogateEvaluator(space)
        config = MnsgaConfig(
            population_size=self.population_size,
            generations=self.generations,
            crossover_prob=self.crossover_prob,
            mutation_prob=self.mutation_prob,
            g1_max_macs=self.g1_max_macs,
            g2_max_params=self.g2_max_params,
            stage1_trial_budget=self.stage1_trial_budget,
            seed=self.seed,
        )
        engine = MnsgaEngine(config, space, evaluator, algorithm=self.algorithm, n_jobs=self.n_jobs)
        state = engine.run()
        self.space_ = space
        self.evaluator_ = evaluator
        self.population_ = state.population
        self.archive_ = state.archive
        self.metrics_ = state.metrics
        self.pareto_genomes_ = [e.genome for e in state.archive]
        self.pareto_objectives_ = state.archive.objectives()
        return self

    def predict(self, X):
        """(loss, MACs, params) for each genome in ``X``."""
        check_is_fitted(self, "archive_")
        genomes = check_genomes(X, self.space_)
        return np.array(
            [(self.evaluator_.evaluate(g), *genome_cost(self.space_, g)) for g in genomes], dtype=float
        ).reshape(-1, 3)
