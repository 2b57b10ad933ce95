"""
Binary encoded genetic algorithm that searches the design box for the design whose surrogate predicted curves are
closest to a target. Serves as the baseline the design model is compared with.

Each design variable is a 16 bit unsigned integer (most significant bit first) mapped linearly onto its range.
"""

import logging

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from metapatch import geometry
from metapatch.errors import InvalidConfig, LengthMismatch
from metapatch.sampling import DEFAULT_RANGES

logger = logging.getLogger(__name__)

INVALID_PENALTY = 1e6


@dataclass
class GAConfig:

    population: int = 100
    bits_per_var: int = 16
    tournament_size: int = 2
    p_crossover: float = 0.8
    p_mutation: float = 0.8
    generations: int = 100
    elitism: int = 1
    seed: int = 4
    ranges: dict = field(default_factory=lambda: dict(DEFAULT_RANGES))

    def __post_init__(self):
        if self.population < 2 or self.population % 2:
            raise InvalidConfig("population must be even and at least 2, got {}".format(self.population))
        if self.bits_per_var < 8:
            raise InvalidConfig("at least 8 bits per variable are needed, got {}".format(self.bits_per_var))
        if not 0 <= self.elitism < self.population:
            raise InvalidConfig("elitism must be in [0, population), got {}".format(self.elitism))
        if self.tournament_size < 1:
            raise InvalidConfig("tournament size must be positive")
        for p in (self.p_crossover, self.p_mutation):
            if not 0 <= p <= 1:
                raise InvalidConfig("probabilities must lie in [0, 1], got {}".format(p))

    @classmethod
    def from_setup(cls, setup, seed=4, ranges=None):
        """From the ``ga`` section of a pipeline setup."""
        return cls(seed=seed, ranges=dict(ranges or DEFAULT_RANGES), **setup)

    @property
    def length(self):
        return len(geometry.DESIGN_VARIABLES) * self.bits_per_var

    def bounds(self):
        low = np.array([self.ranges[k][0] for k in geometry.DESIGN_VARIABLES], dtype=float)
        high = np.array([self.ranges[k][1] for k in geometry.DESIGN_VARIABLES], dtype=float)
        return low, high


# { Encoding

def _place_values(cfg):
    return 2 ** np.arange(cfg.bits_per_var - 1, -1, -1, dtype=np.int64)


def decode_population(population, cfg):
    """(n, 3 * bits) array of bits -> (n, 3) design variables."""
    population = np.asarray(population)
    if population.ndim != 2 or population.shape[1] != cfg.length:
        raise LengthMismatch("chromosomes must hold {} bits, got shape {}".format(cfg.length, population.shape))
    ints = population.reshape(len(population), 3, cfg.bits_per_var).astype(np.int64) @ _place_values(cfg)
    low, high = cfg.bounds()
    return low + ints / float(2 ** cfg.bits_per_var - 1) * (high - low)


def decode(chromosome, cfg=None):
    """Bit string -> DesignParams."""
    cfg = cfg or GAConfig()
    chromosome = np.asarray(chromosome)
    if chromosome.ndim != 1 or len(chromosome) != cfg.length:
        raise LengthMismatch("chromosome must hold {} bits, got {}".format(cfg.length, chromosome.shape))
    return geometry.DesignParams.from_array(decode_population(chromosome[None, :], cfg)[0])


def encode(params, cfg=None):
    """DesignParams (or (lambda, t, A)) -> bit string, each variable rounded to the nearest level."""
    cfg = cfg or GAConfig()
    values = params.as_array() if hasattr(params, 'as_array') else np.asarray(params, dtype=float)
    low, high = cfg.bounds()
    levels = 2 ** cfg.bits_per_var - 1
    ints = np.clip(np.rint((values - low) / (high - low) * levels), 0, levels).astype(np.int64)
    bits = (ints[:, None] // _place_values(cfg)[None, :]) % 2
    return bits.ravel().astype(np.uint8)

# }


# { Fitness

def make_fitness(targets_std, surrogates, alpha=1.0, beta=1.0):
    """
    Fitness of a batch of designs: weighted MSE between the standardised surrogate predictions and the standardised
    targets, plus a penalty for designs with overlapping peaks. Lower is better.

    A channel with zero weight or an all NaN target does not enter the fitness.

    :raises ValueError: when no channel is left
    """
    weights = {}
    for name, w in (('nu', alpha), ('sigma', beta)):
        target = np.asarray(targets_std[name], dtype=float)
        if w > 0 and not np.all(np.isnan(target)):
            weights[name] = w
    if not weights:
        raise ValueError("the fitness needs a target curve with a positive weight")
    weight = sum(weights.values())

    def fitness(values):
        values = np.atleast_2d(values)
        res = np.zeros(len(values))
        for name, w in weights.items():
            pred = surrogates[name].predict_standardized(surrogates[name]._process_features(values))
            res += w * np.mean((pred - np.atleast_2d(targets_std[name])) ** 2, axis=1)
        res /= weight
        invalid = ~geometry.is_valid(values[:, 0], values[:, 1], values[:, 2])
        return res + INVALID_PENALTY * invalid

    return fitness

# }


@dataclass
class GAResult:

    best: geometry.DesignParams
    best_fitness: float
    history: pd.DataFrame
    population: np.ndarray
    fitness: np.ndarray
    cfg: GAConfig

    def top_designs(self, k=3):
        """The k fittest distinct individuals of the final population."""
        order = np.argsort(self.fitness, kind='stable')
        seen, res = set(), []
        for i in order:
            key = self.population[i].tobytes()
            if key in seen:
                continue
            seen.add(key)
            res.append(decode(self.population[i], self.cfg))
            if len(res) == k:
                break
        return res


def _tournament(rng, fitness, n, size):
    contenders = rng.integers(0, len(fitness), size=(n, size))
    winners = np.argmin(fitness[contenders], axis=1)
    return contenders[np.arange(n), winners]


def _crossover(rng, parents, p_crossover):
    children = parents.copy()
    n_pairs, length = len(parents) // 2, parents.shape[1]
    do = rng.random(n_pairs) < p_crossover
    points = rng.integers(1, length, size=n_pairs)
    for k in np.flatnonzero(do):
        a, b, c = 2 * k, 2 * k + 1, points[k]
        children[a, c:], children[b, c:] = parents[b, c:], parents[a, c:]
    return children


def _mutate(rng, children, p_mutation):
    length = children.shape[1]
    mutate = rng.random(len(children)) < p_mutation
    flips = (rng.random(children.shape) < 1. / length) & mutate[:, None]
    return np.where(flips, 1 - children, children).astype(np.uint8)


def evolve(targets_std, surrogates, cfg=None, alpha=1.0, beta=1.0, fitness=None):
    """
    Run the genetic algorithm for cfg.generations generations.

    :param targets_std: dict with 'nu' and 'sigma' targets in standardised units
    :param surrogates: dict with 'nu' and 'sigma' CurvePredictor
    :param fitness: optional callable(values (n, 3)) -> (n,) replacing the surrogate fitness
    :return: GAResult, history holds generation, best_fitness and mean_fitness
    """
    cfg = cfg or GAConfig()
    rng = np.random.default_rng(cfg.seed)
    fitness = fitness or make_fitness(targets_std, surrogates, alpha=alpha, beta=beta)

    population = rng.integers(0, 2, size=(cfg.population, cfg.length)).astype(np.uint8)
    scores = fitness(decode_population(population, cfg))

    history = {'generation': [], 'best_fitness': [], 'mean_fitness': []}

    def record(generation):
        history['generation'].append(generation)
        history['best_fitness'].append(float(scores.min()))
        history['mean_fitness'].append(float(scores.mean()))

    record(0)
    n_children = cfg.population - cfg.elitism
    n_parents = n_children + n_children % 2
    for generation in range(1, cfg.generations + 1):
        elite = population[np.argsort(scores, kind='stable')[:cfg.elitism]]

        parents = population[_tournament(rng, scores, n_parents, cfg.tournament_size)]
        children = _mutate(rng, _crossover(rng, parents, cfg.p_crossover), cfg.p_mutation)

        population = np.vstack([elite, children[:n_children]])
        scores = fitness(decode_population(population, cfg))
        record(generation)

    best = int(np.argmin(scores))
    logger.info("GA finished after %d generations, best fitness %.4e", cfg.generations, scores[best])

    return GAResult(best=decode(population[best], cfg), best_fitness=float(scores[best]),
                    history=pd.DataFrame(history), population=population, fitness=scores, cfg=cfg)
