"""
Explanations of the forward surrogates.

Expected gradients attribute the change of every output between a background design and the explained design to
the three design variables: the input gradient is averaged along straight paths from background points to the
design and multiplied with the input difference. Attributions are computed in the standardised input space the
surrogates are trained in.

The sensitivity analysis varies one design variable over its range with the other two at the range midpoints, and
regresses the Euclidean distance of every predicted curve to the curve with the smallest mean absolute value on the
value of the varied variable. Grid points with overlapping peaks are left out. The slope of that line is the
sensitivity; the slope times the range width, the effect of the variable over its range, is compared with the
attributions.
"""

import logging

from dataclasses import dataclass

import numpy as np
import pandas as pd

from metapatch import geometry
from metapatch.errors import RankingDisagreement
from metapatch.sampling import DEFAULT_RANGES

logger = logging.getLogger(__name__)

VARIABLES = geometry.DESIGN_VARIABLES


@dataclass
class AttributionReport:
    """Mean absolute attribution per design variable over all outputs and explained points."""

    values: np.ndarray
    background_size: int
    k_samples: int
    n_points: int

    def ranking(self):
        return [VARIABLES[i] for i in np.argsort(-self.values, kind='stable')]

    def to_dict(self):
        return {'attribution': dict(zip(VARIABLES, self.values.tolist())), 'background_size': self.background_size,
                'k_samples': self.k_samples, 'n_points': self.n_points, 'ranking': self.ranking()}


@dataclass
class SensitivityReport:
    """
    Slope per design variable with the evaluation grids and the index of the baseline curve on each grid.

    ``widths`` are the widths of the ranges the variables were varied over; without them the effects are the
    absolute slopes.
    """

    slopes: np.ndarray
    grids: np.ndarray
    baselines: np.ndarray
    widths: np.ndarray = None

    @property
    def effects(self):
        effects = np.abs(self.slopes)
        return effects if self.widths is None else effects * np.asarray(self.widths, dtype=float)

    def ranking(self):
        return [VARIABLES[i] for i in np.argsort(-self.effects, kind='stable')]

    def to_dict(self):
        return {'slope': dict(zip(VARIABLES, self.slopes.tolist())),
                'effect': dict(zip(VARIABLES, self.effects.tolist())), 'baseline_index':
                dict(zip(VARIABLES, [int(b) for b in self.baselines])), 'grid_size': int(self.grids.shape[1]),
                'ranking': self.ranking()}


def _jacobian_of(model):
    return model.jacobian if hasattr(model, 'jacobian') else model


# { Expected gradients

def expected_gradients(model, x, background, k_samples=200, seed=5, return_signed=False):
    """
    Expected gradients attribution.

    The same interpolation fractions are used for every (point, background) pair.

    :param model: object with a ``jacobian(x)`` method or a callable returning d output / d input, (n, n_out, n_in)
    :param x: points to explain, (n_in,) or (m, n_in)
    :param background: (b, n_in) background points
    :param return_signed: return the signed attributions per output, (m, n_out, n_in)
    :return: mean absolute attribution over the outputs per point and input, (m, n_in)
    """
    jacobian = _jacobian_of(model)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    background = np.atleast_2d(np.asarray(background, dtype=float))
    alphas = np.random.default_rng(seed).uniform(size=k_samples)

    signed = []
    for point in x:
        diff = point - background
        path = background[:, None, :] + alphas[None, :, None] * diff[:, None, :]
        J = jacobian(path.reshape(-1, x.shape[1]))
        J = J.reshape(len(background), k_samples, -1, x.shape[1])
        signed.append(np.mean(J * diff[:, None, None, :], axis=(0, 1)))

    signed = np.array(signed)
    if return_signed:
        return signed
    return np.mean(np.abs(signed), axis=1)


def attribution_report(model, x, background, k_samples=200, seed=5):
    values = expected_gradients(model, x, background, k_samples=k_samples, seed=seed)
    return AttributionReport(values=values.mean(axis=0), background_size=len(background), k_samples=k_samples,
                             n_points=len(np.atleast_2d(x)))

# }


# { Sensitivity

def _predict_of(model):
    return model.predict if hasattr(model, 'predict') else model


def sensitivity_slope(model, var_index, grid=100, fixed=None, ranges=None, return_details=False):
    """
    Sensitivity of the predicted curve to one design variable.

    :param model: object with ``predict(designs)`` or a callable mapping (n, 3) designs in mm to (n, 30) curves
    :param var_index: 0 (lambda), 1 (t) or 2 (A)
    :param fixed: values of the other variables, default the range midpoints
    :return: least squares slope of distance-to-baseline against the variable value, over the grid points with a
             valid geometry. With return_details also the grid and the grid index of the baseline curve.
    """
    predict = _predict_of(model)
    ranges = ranges or DEFAULT_RANGES
    low = np.array([ranges[k][0] for k in VARIABLES], dtype=float)
    high = np.array([ranges[k][1] for k in VARIABLES], dtype=float)
    fixed = (low + high) / 2. if fixed is None else np.asarray(fixed, dtype=float)

    values = np.linspace(low[var_index], high[var_index], grid)
    designs = np.tile(fixed, (grid, 1))
    designs[:, var_index] = values

    valid = np.flatnonzero(geometry.is_valid(designs[:, 0], designs[:, 1], designs[:, 2]))
    if len(valid) < 2:
        logger.warning("fewer than two valid designs when varying %s, sensitivity set to 0", VARIABLES[var_index])
        slope, baseline = 0., int(valid[0]) if len(valid) else 0
    else:
        curves = np.atleast_2d(predict(designs[valid]))
        nearest = int(np.argmin(np.mean(np.abs(curves), axis=1)))
        distance = np.linalg.norm(curves - curves[nearest], axis=1)
        slope = float(np.polyfit(values[valid], distance, 1)[0])
        baseline = int(valid[nearest])

    if return_details:
        return slope, values, baseline
    return slope


def sensitivity_report(model, grid=100, ranges=None):
    ranges = ranges or DEFAULT_RANGES
    slopes, grids, baselines = [], [], []
    for k in range(len(VARIABLES)):
        slope, values, baseline = sensitivity_slope(model, k, grid=grid, ranges=ranges, return_details=True)
        slopes.append(slope)
        grids.append(values)
        baselines.append(baseline)
    widths = np.array([ranges[k][1] - ranges[k][0] for k in VARIABLES], dtype=float)
    return SensitivityReport(slopes=np.array(slopes), grids=np.array(grids), baselines=np.array(baselines),
                             widths=widths)

# }


def normalized_comparison(attribution, sensitivity):
    """
    Paired bars: the sensitivity effects rescaled so that the largest equals the largest attribution.

    :return: DataFrame with columns variable, attribution, sensitivity_normalized
    """
    sens = sensitivity.effects
    factor = attribution.values.max() / sens.max() if sens.max() > 0 else 0.
    return pd.DataFrame({'variable': list(VARIABLES), 'attribution': attribution.values,
                         'sensitivity_normalized': sens * factor})


def check_rankings(target, attribution, sensitivity, strict=False):
    """
    Compare the variable rankings of attribution and sensitivity.

    :return: True when they agree
    :raises RankingDisagreement: when they differ and strict is set
    """
    if attribution.ranking() == sensitivity.ranking():
        return True
    if strict:
        raise RankingDisagreement(target, attribution.ranking(), sensitivity.ranking())
    logger.warning("%s surrogate: attribution ranking %s differs from sensitivity ranking %s",
                   target, attribution.ranking(), sensitivity.ranking())
    return False


def explain_model(predictor, dataset, setup=None, seed=5, ranges=None, strict=False):
    """
    Attribution and sensitivity of one surrogate.

    The background is drawn from the training designs, the explained points are the test designs. Both are mapped
    to the network input space of the surrogate.

    :param predictor: CurvePredictor
    :param dataset: sampling.Dataset
    :param setup: ``explain`` section (background, k_samples, grid)
    :param strict: raise when the rankings differ instead of logging a warning
    :return: (AttributionReport, SensitivityReport, comparison DataFrame)
    :raises RankingDisagreement: in strict mode, when the rankings differ
    """
    setup = setup or {'background': 50, 'k_samples': 200, 'grid': 100}
    rng = np.random.default_rng(seed)

    train = dataset.inputs('train')
    n_background = min(setup['background'], len(train))
    background = train[np.sort(rng.choice(len(train), size=n_background, replace=False))]

    points = dataset.inputs('test')
    if len(points) == 0:
        points = dataset.inputs('val') if len(dataset.inputs('val')) else train

    attribution = attribution_report(predictor, predictor._process_features(points),
                                     predictor._process_features(background),
                                     k_samples=setup['k_samples'], seed=seed)
    sensitivity = sensitivity_report(predictor, grid=setup['grid'], ranges=ranges or dataset.ranges)

    check_rankings(predictor.target, attribution, sensitivity, strict=strict)

    return attribution, sensitivity, normalized_comparison(attribution, sensitivity)
