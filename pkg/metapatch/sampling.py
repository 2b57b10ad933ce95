"""
Design pool, greedy sampling and labelling.

Greedy sampling works in the input space: the design variables are normalised to the unit cube with the pool ranges,
the first pick is the pool point nearest the pool centroid, and every next pick is the pool point whose smallest
distance to the points already picked is the largest.
"""

import logging

from dataclasses import dataclass, field

import numpy as np

from joblib import Parallel, delayed
from sklearn.model_selection import train_test_split

from metapatch import geometry, mechanics
from metapatch.errors import ExhaustedSampler, InsufficientLabels, NonConvergence

logger = logging.getLogger(__name__)

DEFAULT_RANGES = {'lambda': (2.0, 21.0), 't': (0.2, 2.1), 'A': (0.2, 2.1)}


@dataclass
class PoolSpec:

    ranges: dict = field(default_factory=lambda: dict(DEFAULT_RANGES))
    size: int = 5000
    seed: int = 1

    def bounds(self):
        """(lower, upper) arrays in (lambda, t, A) order."""
        low = np.array([self.ranges[k][0] for k in geometry.DESIGN_VARIABLES], dtype=float)
        high = np.array([self.ranges[k][1] for k in geometry.DESIGN_VARIABLES], dtype=float)
        return low, high


@dataclass
class Dataset:
    """Labelled designs with a train / validation / test split of record indices."""

    designs: list
    curves: list
    split: dict
    ranges: dict = field(default_factory=lambda: dict(DEFAULT_RANGES))
    seeds: dict = field(default_factory=dict)
    # load step history of every record as SolveTrace.to_dict, not stored in the dataset file
    traces: list = None

    def __len__(self):
        return len(self.designs)

    def inputs(self, subset=None):
        """(n, 3) design variables in (lambda, t, A) order."""
        idx = self.indices(subset)
        return np.array([self.designs[i].as_array() for i in idx]).reshape(-1, 3)

    def targets(self, channel, subset=None):
        """(n, 30) curves of one channel: 'nu' or 'sigma'."""
        if channel not in ('nu', 'sigma'):
            raise ValueError("channel must be 'nu' or 'sigma', got {}".format(channel))
        idx = self.indices(subset)
        return np.array([getattr(self.curves[i], channel) for i in idx]).reshape(len(idx), len(self.strain_grid))

    def indices(self, subset=None):
        if subset is None:
            return list(range(len(self.designs)))
        return list(self.split[subset])

    @property
    def strain_grid(self):
        return self.curves[0].strain_grid


# { Pool

def generate_pool(spec, max_draws=10 ** 6):
    """
    Draw spec.size valid designs uniformly inside the ranges by rejection.

    :return: list of geometry.ValidDesign
    """
    rng = np.random.default_rng(spec.seed)
    low, high = spec.bounds()

    accepted = []
    draws = 0
    batch = max(1024, 2 * spec.size)
    while len(accepted) < spec.size:
        if draws >= max_draws:
            raise ExhaustedSampler("only {} valid designs in {} draws".format(len(accepted), draws))
        x = rng.uniform(low, high, size=(batch, 3))
        draws += batch
        ok = geometry.is_valid(x[:, 0], x[:, 1], x[:, 2])
        accepted.extend(x[ok])
        if draws >= 10 * batch and len(accepted) < 0.001 * draws:
            raise ExhaustedSampler("rejection rate above 0.999 after {} draws".format(draws))

    logger.info("pool of %d designs drawn from %d candidates", spec.size, draws)
    return [geometry.validate_design(p) for p in accepted[:spec.size]]


def normalise(points, ranges=None):
    """Map (lambda, t, A) onto the unit cube using the pool ranges."""
    ranges = ranges or DEFAULT_RANGES
    low = np.array([ranges[k][0] for k in geometry.DESIGN_VARIABLES])
    high = np.array([ranges[k][1] for k in geometry.DESIGN_VARIABLES])
    return (np.asarray(points, dtype=float) - low) / (high - low)

# }


# { Greedy sampling

def iter_greedy(points, first=None):
    """
    Yield pool indices in greedy order until the pool is exhausted.

    :param points: (n, k) array of already normalised coordinates
    :param first: index of the first pick, default the point nearest the centroid
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    n = len(points)
    if n == 0:
        return

    if first is None:
        centroid = points.mean(axis=0)
        first = int(np.argmin(np.linalg.norm(points - centroid, axis=1)))

    min_dist = np.linalg.norm(points - points[first], axis=1)
    min_dist[first] = -np.inf
    yield first

    for _ in range(n - 1):
        # argmax returns the lowest index on ties
        pick = int(np.argmax(min_dist))
        yield pick
        min_dist = np.minimum(min_dist, np.linalg.norm(points - points[pick], axis=1))
        min_dist[pick] = -np.inf


def greedy_indices(points, budget, first=None):
    """First `budget` greedy picks of an array of normalised points."""
    if budget > len(points):
        raise ValueError("budget {} exceeds pool size {}".format(budget, len(points)))
    order = []
    for i in iter_greedy(points, first=first):
        if len(order) == budget:
            break
        order.append(i)
    return order


def greedy_select(pool, budget=150, ranges=None, first=None):
    """
    Greedy selection of the most informative designs of a pool.

    :param pool: list of ValidDesign
    :param budget: number of picks
    :return: ordered list of pool indices
    """
    points = normalise([v.as_array() for v in pool], ranges)
    return greedy_indices(points, budget, first=first)

# }


# { Labelling

def split_sizes(n, n_val=9, n_test=9):
    """Validation and test sizes: the 150 record run gives 132 / 9 / 9, smaller sets scale down."""
    if n >= n_val + n_test + 1 and n >= 150:
        return n_val, n_test
    n_val = max(1, int(round(n * n_val / 150.))) if n >= 3 else 0
    n_test = max(1, int(round(n * n_test / 150.))) if n >= 3 else 0
    return n_val, n_test


def split_indices(n, split_seed, n_val=9, n_test=9):
    """Uniform random train / val / test split of range(n)."""
    n_val, n_test = split_sizes(n, n_val, n_test)
    idx = np.arange(n)
    if n_val + n_test == 0:
        return {'train': idx.tolist(), 'val': [], 'test': []}
    train_val, test = train_test_split(idx, test_size=n_test, random_state=split_seed)
    train, val = train_test_split(train_val, test_size=n_val, random_state=split_seed)
    return {'train': sorted(int(i) for i in train), 'val': sorted(int(i) for i in val),
            'test': sorted(int(i) for i in test)}


def _label(oracle, design, material, config):
    # returns the failing load step instead of the exception, which does not pickle back from a worker
    try:
        curves, trace = oracle(design, material, config)
        return curves, trace.to_dict() if trace is not None else None, None
    except NonConvergence as e:
        return None, None, e.step


def label_and_split(pool, picks, material=None, config=None, split_seed=2, reserve=None, oracle=None,
                    n_jobs=1, n_val=9, n_test=9, ranges=None, seeds=None):
    """
    Label the picked designs with the tension test and split them into train / val / test.

    Designs whose tension test does not converge are replaced by the next design in greedy order; the replacement
    is logged.

    :param pool: list of ValidDesign
    :param picks: ordered pool indices to label
    :param reserve: pool indices to draw replacements from, in order. Default: the greedy continuation of picks.
    :param oracle: callable(design, material, config) -> (PropertyCurves, trace), default run_tension_test
    :param n_jobs: parallel workers (joblib), results are merged in pick order
    :return: Dataset
    :raises InsufficientLabels: when the pool runs out of replacements
    """
    oracle = oracle or mechanics.run_tension_test
    config = config or mechanics.MechanicsConfig()
    picks = list(picks)

    if reserve is None:
        points = normalise([v.as_array() for v in pool], ranges)
        chosen = set(picks)
        reserve = [i for i in iter_greedy(points, first=picks[0] if picks else None) if i not in chosen]
    reserve = list(reserve)

    results = {}
    pending = list(picks)
    slots = list(range(len(picks)))
    while pending:
        labelled = Parallel(n_jobs=n_jobs)(delayed(_label)(oracle, pool[i], material, config) for i in pending)

        failed_slots = []
        for slot, i, (curves, trace, failed_step) in zip(slots, pending, labelled):
            if failed_step is None:
                results[slot] = (i, curves, trace)
            else:
                failed_slots.append((slot, i, failed_step))

        pending, slots = [], []
        for slot, i, failed_step in failed_slots:
            if not reserve:
                raise InsufficientLabels("no designs left in the pool to replace design {}".format(i))
            replacement = reserve.pop(0)
            logger.warning("design %d (%s) did not converge at step %d, replaced by design %d",
                           i, pool[i].to_dict(), failed_step, replacement)
            pending.append(replacement)
            slots.append(slot)

    order = [results[slot] for slot in sorted(results)]
    designs = [pool[i] for i, _, _ in order]
    curves = [c for _, c, _ in order]
    traces = [trace for _, _, trace in order]

    split = split_indices(len(designs), split_seed, n_val=n_val, n_test=n_test)
    seeds = dict(seeds or {})
    seeds.setdefault('split', split_seed)

    return Dataset(designs=designs, curves=curves, split=split, ranges=dict(ranges or DEFAULT_RANGES), seeds=seeds,
                   traces=traces)

# }
