"""
Inverse design through frozen forward surrogates.

The design network takes a target Poisson's ratio curve and a target stress curve (30 points each, standardised
with the scalers of the corresponding surrogate) and returns N groups of design variables (lambda, t, A) in mm.
Every group is fed to both surrogates, and the network is trained on the deviation of the predicted curves from
the targets. Design labels never enter the loss.

When several groups are requested an additional term penalises groups that are scaled copies of each other: the
penalty is the reciprocal of the mean squared deviation of the element wise ratios between two groups from their
mean ratio. A squared hinge keeps the groups inside the sampled design box and away from touching peaks.

At proposal time the network output is the starting point of a short gradient descent on the same loss for the
single target, with the weight of a channel missing from the target set to zero.
"""

import dataclasses
import logging

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from metapatch import defaults, fileio, geometry, mechanics, neural, sampling
from metapatch.errors import GridMismatch, InvalidConfig, ShapeMismatch, StaleArtifact

logger = logging.getLogger(__name__)

N_LEVELS = 30
N_VARIABLES = 3

# centre of the sampled design box, used to start the design layer
START_DESIGN = np.array([11.5, 1.15, 1.15])


@dataclass
class InverseLossConfig:

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.0
    N: int = 1
    eps_scale: float = 1e-6
    cap: float = 1e6
    Q: int = N_LEVELS
    P: int = N_VARIABLES
    feasibility: float = 10.0
    margin: float = 0.01
    ranges: dict = None

    def __post_init__(self):
        if self.N < 1:
            raise InvalidConfig("at least one design group is needed, got N = {}".format(self.N))
        if self.N == 1 and self.gamma != 0:
            raise InvalidConfig("the scale loss needs two or more design groups, set gamma = 0 for N = 1")
        if min(self.alpha, self.beta, self.gamma) < 0 or self.alpha + self.beta == 0:
            raise InvalidConfig("alpha and beta must be non-negative and not both zero, gamma non-negative")
        if self.eps_scale <= 0 or self.cap <= 0:
            raise InvalidConfig("eps_scale and cap must be positive")
        if self.feasibility < 0 or not 0 <= self.margin < 0.5:
            raise InvalidConfig("feasibility must be non-negative and margin in [0, 0.5)")
        if self.ranges is not None:
            self.ranges = {k: [float(self.ranges[k][0]), float(self.ranges[k][1])]
                           for k in geometry.DESIGN_VARIABLES}

    @classmethod
    def from_setup(cls, setup, ranges=None):
        """From the ``inverse`` section of a pipeline setup."""
        return cls(alpha=setup['alpha'], beta=setup['beta'], gamma=setup['gamma'], N=setup['n_designs'],
                   eps_scale=setup['eps_scale'], cap=setup['cap'],
                   feasibility=setup.get('feasibility', 10.0), margin=setup.get('margin', 0.01), ranges=ranges)

    @property
    def design_ranges(self):
        return self.ranges if self.ranges is not None else sampling.DEFAULT_RANGES

    def to_dict(self):
        return dict(self.__dict__)


def effective_config(curves, cfg):
    """
    The loss setup for one target: the weight of a channel that is missing from the target (all NaN) is zero.

    :raises ShapeMismatch: when both channels are missing
    """
    missing = {name: bool(np.all(np.isnan(np.asarray(getattr(curves, name), dtype=float))))
               for name in ('nu', 'sigma')}
    if all(missing.values()):
        raise ShapeMismatch("target has neither a Poisson's ratio nor a stress curve")
    if not any(missing.values()):
        return cfg
    return dataclasses.replace(cfg, alpha=0. if missing['nu'] else cfg.alpha,
                               beta=0. if missing['sigma'] else cfg.beta)


def build_design_net(N, layers=None, seed=3):
    """
    Design network spec: 60 inputs, ReLU hidden layers, 3N softplus outputs.
    """
    if N < 1:
        raise InvalidConfig("at least one design group is needed, got N = {}".format(N))
    layers = list(layers) if layers is not None else defaults.default_inverse['layers']
    return neural.NetworkSpec(layer_sizes=[2 * N_LEVELS] + layers + [N_VARIABLES * N], seed=seed,
                              output_activation='softplus')


# { Losses

def _as_group_batch(groups):
    groups = np.asarray(groups, dtype=float)
    single = groups.ndim == 2
    if single:
        groups = groups[None]
    if groups.ndim != 3 or groups.shape[2] != N_VARIABLES:
        raise ShapeMismatch("design groups must have shape (N, 3) or (batch, N, 3), got {}".format(groups.shape))
    return groups, single


def scale_loss(groups, eps_scale=1e-6, cap=1e6, return_gradient=False):
    """
    Penalty on proportional design groups.

    For every pair of groups i < j the ratios r_k = D_ik / D_jk are compared with their mean; the squared deviations
    are averaged over all P * C(N, 2) terms to S and min(1 / max(S, eps_scale), cap) is returned. A batch of shape
    (batch, N, 3) gives the batch mean.

    :raises InvalidConfig: for fewer than two groups
    """
    D, _ = _as_group_batch(groups)
    n_batch, N, P = D.shape
    if N < 2:
        raise InvalidConfig("the scale loss needs at least two design groups, got {}".format(N))

    i, j = np.triu_indices(N, 1)
    n_terms = P * len(i)

    r = D[:, i, :] / D[:, j, :]
    dev = r - r.mean(axis=2, keepdims=True)
    S = np.sum(dev ** 2, axis=(1, 2)) / n_terms
    raw = 1. / np.maximum(S, eps_scale)
    L = np.minimum(raw, cap)

    if not return_gradient:
        return float(np.mean(L))

    # the mean ratio does not contribute: the deviations sum to zero
    dL_dS = np.where((S > eps_scale) & (raw < cap), -raw ** 2, 0.) / n_batch
    dL_dr = dL_dS[:, None, None] * 2. * dev / n_terms

    grad = np.zeros_like(D)
    np.add.at(grad, (slice(None), i, slice(None)), dL_dr / D[:, j, :])
    np.add.at(grad, (slice(None), j, slice(None)), -dL_dr * D[:, i, :] / D[:, j, :] ** 2)

    return float(np.mean(L)), grad


def pairwise_ratio_deviation(groups):
    """Mean squared deviation of the ratios from their mean for every pair of groups: {(i, j): value}."""
    groups = np.asarray(groups, dtype=float)
    res = {}
    for a, b in combinations(range(len(groups)), 2):
        r = groups[a] / groups[b]
        res[(a, b)] = float(np.mean((r - r.mean()) ** 2))
    return res


def feasibility_loss(groups, ranges=None, margin=0.01, return_gradient=False):
    """
    Squared hinge on designs outside the box of ranges (in units of the range width) and on designs whose peak gap
    is smaller than margin * lambda, averaged over all groups. Zero for every design inside the box with d / lambda
    of at least margin.

    :param groups: design groups in mm, shape (N, 3) or (batch, N, 3)
    :param ranges: dict of (low, high) per design variable, default the sampling ranges
    """
    D, _ = _as_group_batch(groups)
    ranges = ranges or sampling.DEFAULT_RANGES
    low = np.array([ranges[k][0] for k in geometry.DESIGN_VARIABLES], dtype=float)
    width = np.array([ranges[k][1] for k in geometry.DESIGN_VARIABLES], dtype=float) - low
    n = D.shape[0] * D.shape[1]

    u = (D - low) / width
    below, above = np.maximum(-u, 0.), np.maximum(u - 1., 0.)

    lam, t, A = D[..., 0], D[..., 1], D[..., 2]
    gap = 0.5 - (2. * A + t) / lam
    short = np.maximum(margin - gap, 0.)

    L = float((np.sum(below ** 2 + above ** 2) + np.sum(short ** 2)) / n)
    if not return_gradient:
        return L

    grad = 2. * (above - below) / width
    # d gap / d (lambda, t, A)
    dgap = np.stack([(2. * A + t) / lam ** 2, -1. / lam, -2. / lam], axis=-1)
    grad -= 2. * short[..., None] * dgap
    return L, grad / n


def in_ranges(values, ranges=None, rtol=1e-6):
    """True when a design (lambda, t, A) lies inside the ranges, up to rtol of the range width."""
    ranges = ranges or sampling.DEFAULT_RANGES
    for value, name in zip(values, geometry.DESIGN_VARIABLES):
        low, high = ranges[name]
        slack = rtol * (high - low)
        if not low - slack <= value <= high + slack:
            return False
    return True


def _surrogate_terms(groups, targets_std, surrogate, weight, gradient=False):
    """Mean squared deviation in standardised units of one surrogate over all groups and levels."""
    n_batch, N, _ = groups.shape
    x_std = surrogate._process_features(groups.reshape(-1, N_VARIABLES))
    pred, cache = surrogate.network.forward(x_std, return_cache=True)
    pred = pred.reshape(n_batch, N, -1)
    residual = pred - targets_std[:, None, :]
    loss = float(np.mean(residual ** 2))
    if not gradient or weight == 0:
        return loss, None

    # surrogate parameters stay frozen: only the gradient with respect to its input is used
    grad_pred = weight * 2. * residual / residual.size
    _, grad_x_std = surrogate.network.backward(cache, grad_pred.reshape(n_batch * N, -1))
    grad_groups = grad_x_std * surrogate.feature_derivative(groups.reshape(-1, N_VARIABLES))
    return loss, grad_groups.reshape(n_batch, N, N_VARIABLES)


def _check_targets(targets_std, groups):
    for name in ('nu', 'sigma'):
        t = np.atleast_2d(targets_std[name])
        if t.shape != (groups.shape[0], N_LEVELS):
            raise ShapeMismatch("{} targets of shape {} for {} design sets".format(name, t.shape, groups.shape[0]))


def total_loss(targets_std, groups, surrogates, cfg, return_gradient=False):
    """
    alpha * L_nu + beta * L_sigma + gamma * L_scale + feasibility * L_feasibility.

    :param targets_std: dict with 'nu' and 'sigma' targets, standardised with the surrogate target scalers,
                        shape (30,) or (batch, 30)
    :param groups: design groups in mm, shape (N, 3) or (batch, N, 3)
    :param surrogates: dict with 'nu' and 'sigma' CurvePredictor
    :param cfg: InverseLossConfig
    :return: (total, components) and, when return_gradient, the gradient with respect to groups as third value
    """
    groups, single = _as_group_batch(groups)
    if groups.shape[1] != cfg.N:
        raise ShapeMismatch("{} design groups given for N = {}".format(groups.shape[1], cfg.N))
    targets_std = {k: np.atleast_2d(np.asarray(targets_std[k], dtype=float)) for k in ('nu', 'sigma')}
    _check_targets(targets_std, groups)

    L_nu, g_nu = _surrogate_terms(groups, targets_std['nu'], surrogates['nu'], cfg.alpha, gradient=return_gradient)
    L_sigma, g_sigma = _surrogate_terms(groups, targets_std['sigma'], surrogates['sigma'], cfg.beta,
                                        gradient=return_gradient)

    components = {'nu': L_nu, 'sigma': L_sigma, 'scale': 0., 'feasibility': 0.}
    total = cfg.alpha * L_nu + cfg.beta * L_sigma

    grad = np.zeros_like(groups)
    for g in (g_nu, g_sigma):
        if g is not None:
            grad += g

    if cfg.gamma > 0:
        L_scale, g_scale = scale_loss(groups, cfg.eps_scale, cfg.cap, return_gradient=True)
        components['scale'] = L_scale
        total += cfg.gamma * L_scale
        grad += cfg.gamma * g_scale

    if cfg.feasibility > 0:
        L_feasible, g_feasible = feasibility_loss(groups, cfg.design_ranges, cfg.margin, return_gradient=True)
        components['feasibility'] = L_feasible
        total += cfg.feasibility * L_feasible
        grad += cfg.feasibility * g_feasible

    if not return_gradient:
        return total, components
    return total, components, grad[0] if single else grad

# }


# { Design model

def standardize_targets(curves, surrogates, cfg=None):
    """
    Design network input for one or more target curves.

    A channel with zero weight in cfg, or missing from the target (NaN), is set to zero, the training mean.

    :param curves: PropertyCurves or list of PropertyCurves
    :return: (inputs of shape (n, 60), dict of standardised targets)
    """
    if isinstance(curves, mechanics.PropertyCurves):
        curves = [curves]

    targets = {}
    for name, attr, weight in (('nu', 'nu', None if cfg is None else cfg.alpha),
                               ('sigma', 'sigma', None if cfg is None else cfg.beta)):
        raw = np.array([getattr(c, attr) for c in curves], dtype=float).reshape(len(curves), -1)
        if np.all(np.isnan(raw)) or weight == 0:
            std = np.zeros_like(raw)
        elif np.any(np.isnan(raw)):
            raise ShapeMismatch("{} target curve is incomplete".format(name))
        else:
            std = surrogates[name]._process_targets(raw)
        targets[name] = std

    return np.hstack([targets['nu'], targets['sigma']]), targets


class DesignModel:
    """
    Trained design network together with the loss setup and the fingerprints of the surrogates it was trained on.
    """

    def __init__(self, network, cfg, metadata=None):
        self.network = network
        self.cfg = cfg
        self.metadata = metadata or {}
        self.history = None

    def raw_groups(self, inputs):
        """(n, N, 3) design groups in mm for design network inputs of shape (n, 60)."""
        out = self.network.forward(np.atleast_2d(inputs))
        return out.reshape(len(out), self.cfg.N, N_VARIABLES)

    def check_surrogates(self, surrogates):
        expected = self.metadata.get('surrogates')
        if not expected:
            return
        for name, predictor in surrogates.items():
            if predictor.fingerprint() != expected[name]:
                raise StaleArtifact("{} surrogate differs from the one the design model was trained with".format(
                    name))

    def save_model(self, filename, include_history=False):
        history = self.history if include_history else None
        fileio.save_checkpoint(filename, self.network, {}, setup=self.cfg.to_dict(), metadata=self.metadata,
                               history=history)

    @classmethod
    def load_model(cls, filename):
        network, _, setup, metadata, history = fileio.load_checkpoint(filename)
        model = cls(network, InverseLossConfig(**setup), metadata=metadata)
        model.history = history
        return model


def _initial_network(cfg, layers, seed):
    network = neural.Network(build_design_net(cfg.N, layers=layers, seed=seed))
    W, b = network.layers[-1]
    network.layers[-1] = (W, np.tile(neural.inverse_softplus(START_DESIGN), cfg.N))
    return network


def tandem_loss_and_gradients(network, inputs, targets_std, surrogates, cfg):
    """
    Loss of the design network on a batch and its gradient with respect to the design network parameters.

    :return: (loss, list of (dW, db), components)
    """
    out, cache = network.forward(inputs, return_cache=True)
    groups = out.reshape(len(out), cfg.N, N_VARIABLES)
    loss, components, grad_groups = total_loss(targets_std, groups, surrogates, cfg, return_gradient=True)
    grads, _ = network.backward(cache, grad_groups.reshape(out.shape))
    return loss, grads, components


def train_design_model(dataset, surrogates, cfg, hyper=None, seed=3, verbose=False):
    """
    Train the design network on the curves of the dataset (design labels are not used).

    :param dataset: sampling.Dataset, train curves are used for fitting and val curves for early stopping
    :param surrogates: dict with 'nu' and 'sigma' CurvePredictor, left untouched
    :param cfg: InverseLossConfig
    :param hyper: ``inverse`` setup section (layers, learning_rate, epochs, patience, learning rate schedule,
                  refine_steps and refine_lr stored for the proposals)
    :return: DesignModel
    :raises StaleArtifact: if a surrogate was modified during training
    """
    hyper = defaults.add_defaults_to_section('inverse', hyper)
    if cfg.ranges is None:
        cfg = dataclasses.replace(cfg, ranges=dataset.ranges)
    before = {name: p.fingerprint() for name, p in surrogates.items()}

    def batch(subset):
        idx = dataset.indices(subset)
        return standardize_targets([dataset.curves[i] for i in idx], surrogates, cfg)

    X, T = batch('train')
    network = _initial_network(cfg, hyper['layers'], seed)

    validation_loss = None
    if dataset.indices('val'):
        X_val, T_val = batch('val')

        def validation_loss(net):
            out = net.forward(X_val)
            return total_loss(T_val, out.reshape(len(out), cfg.N, N_VARIABLES), surrogates, cfg)[0]

    def loss_and_gradients(net):
        loss, grads, _ = tandem_loss_and_gradients(net, X, T, surrogates, cfg)
        return loss, grads

    history = neural.train_network(network, loss_and_gradients, validation_loss=validation_loss,
                                   epochs=hyper['epochs'], patience=hyper['patience'],
                                   optimizer_kwargs=defaults.get_optimizer('adam', {'lr': hyper['learning_rate']}),
                                   reduce_lr=neural.plateau_schedule(hyper), name='design model')

    after = {name: p.fingerprint() for name, p in surrogates.items()}
    if after != before:
        raise StaleArtifact("a surrogate was modified while training the design model")

    metadata = {'surrogates': before, 'seed': seed, 'epochs': len(history),
                'best_epoch': int(history.attrs.get('best_epoch', -1)),
                'best_val_loss': float(history['val_loss'].min()),
                'strain_grid': dataset.strain_grid.tolist(), 'seeds': dict(dataset.seeds),
                'layers': list(hyper['layers']),
                'refine_steps': int(hyper['refine_steps']), 'refine_lr': float(hyper['refine_lr'])}
    model = DesignModel(network, cfg, metadata=metadata)
    model.history = history

    if verbose:
        print("Design model ({} group{}): {} epochs, best validation loss {:.4e}".format(
            cfg.N, 's' if cfg.N > 1 else '', len(history), metadata['best_val_loss']))

    return model

# }


# { Proposals

@dataclass
class DesignProposal:
    """Design groups proposed for one target, with the surrogate predicted curves and their MAE to the target."""

    groups: list
    raw_groups: list
    valid: list
    curves: list
    mae_nu: list
    mae_sigma: list
    rescaled_to: float = None
    config: dict = field(default_factory=dict)

    def to_dict(self):
        groups = []
        for p, raw, ok, mae_nu, mae_sigma in zip(self.groups, self.raw_groups, self.valid, self.mae_nu,
                                                  self.mae_sigma):
            record = p.to_dict()
            record.update(valid=bool(ok), mae_nu=mae_nu, mae_sigma_kPa=mae_sigma, raw=raw.to_dict())
            groups.append(record)
        return {'groups': groups, 'rescaled_to': self.rescaled_to, 'config': self.config}


def _check_grid(curves, strain_grid):
    grid = np.asarray(strain_grid, dtype=float)
    if curves.strain_grid.shape != grid.shape or not np.allclose(curves.strain_grid, grid, rtol=0, atol=1e-9):
        raise GridMismatch("target strain grid does not match the {} point grid {:.3f} ... {:.3f}".format(
            len(grid), grid[0], grid[-1]))


def _rescaled(values, rescale_to):
    params = geometry.DesignParams.from_array(values)
    if rescale_to is None:
        return params
    if geometry.is_valid(*values):
        return geometry.rescale_design(geometry.validate_design(params), rescale_to).params
    factor = rescale_to / params.lam
    return geometry.DesignParams(lam=float(rescale_to), t=params.t * factor, A=params.A * factor)


def _channel_mae(target, predicted):
    if np.all(np.isnan(target)):
        return None
    return neural.mae(target, predicted)


def refine_designs(raw, targets_std, surrogates, cfg, steps=500, learning_rate=1e-2):
    """
    Gradient descent on the loss of a single target, starting from the design network output.

    The groups are updated through their softplus parameters so they stay positive. The best iterate is kept, so the
    result never has a higher loss than the start.

    :param raw: (N, 3) design groups in mm
    :param targets_std: dict with 'nu' and 'sigma' targets of shape (30,)
    :param cfg: InverseLossConfig, use :func:`effective_config` for a target with a missing channel
    :return: ((N, 3) design groups, loss)
    """
    best = np.atleast_2d(np.asarray(raw, dtype=float)).copy()
    best_loss = total_loss(targets_std, best, surrogates, cfg)[0]

    params = neural.inverse_softplus(best)
    state = neural.AdamState()
    for _ in range(int(steps)):
        groups = neural.softplus(params)
        loss, _, grad = total_loss(targets_std, groups, surrogates, cfg, return_gradient=True)
        if not np.isfinite(loss):
            break
        if loss < best_loss:
            best, best_loss = groups, loss
        [params], state = neural.adam_step([params], [grad * neural.sigmoid(params)], state, lr=learning_rate)

    groups = neural.softplus(params)
    loss = total_loss(targets_std, groups, surrogates, cfg)[0]
    if loss < best_loss:
        best, best_loss = groups, loss

    logger.debug("refined %d design group(s) in %d steps to loss %.4e", len(best), steps, best_loss)
    return best, float(best_loss)


def propose_designs(model, target_curves, surrogates, rescale_to=None, refine_steps=None, refine_lr=None):
    """
    Run the design network on a target, refine its groups on the target and evaluate them with the surrogates.

    :param model: DesignModel
    :param target_curves: PropertyCurves on the 30 point grid, one channel may be NaN
    :param surrogates: dict with 'nu' and 'sigma' CurvePredictor
    :param rescale_to: optional wavelength (mm) every group is scaled to
    :param refine_steps: gradient steps on the target, default as stored with the model; 0 to skip
    :param refine_lr: step size of the refinement, default as stored with the model
    :return: DesignProposal
    :raises GridMismatch: when the target grid differs from the training grid
    """
    strain_grid = model.metadata.get('strain_grid', mechanics.default_strain_grid())
    _check_grid(target_curves, strain_grid)
    model.check_surrogates(surrogates)

    cfg = effective_config(target_curves, model.cfg)
    inputs, targets = standardize_targets(target_curves, surrogates, cfg)
    raw = model.raw_groups(inputs)[0]

    steps = model.metadata.get('refine_steps', 0) if refine_steps is None else refine_steps
    lr = model.metadata.get('refine_lr', 1e-2) if refine_lr is None else refine_lr
    if steps > 0:
        raw, _ = refine_designs(raw, targets, surrogates, cfg, steps=steps, learning_rate=lr)

    return evaluate_designs(raw, target_curves, surrogates, rescale_to=rescale_to, config=model.cfg.to_dict(),
                            ranges=model.cfg.design_ranges)


def evaluate_designs(raw, target_curves, surrogates, rescale_to=None, config=None, ranges=None):
    """
    Rescale design groups, flag the invalid ones and compare their surrogate curves with a target.

    A group is valid when all variables are positive, the peaks do not touch (d > 0) and, when ranges are given, the
    group before rescaling lies inside them. Invalid groups are kept in the proposal and logged.

    :param raw: (N, 3) design groups in mm
    :return: DesignProposal
    """
    groups, raw_params, valid, curves, mae_nu, mae_sigma = [], [], [], [], [], []
    for values in np.atleast_2d(raw):
        params = _rescaled(values, rescale_to)
        ok = bool(geometry.is_valid(params.lam, params.t, params.A))
        if not ok:
            logger.warning("proposed design %s has a non-positive peak gap (d = %.4g mm)", params.to_dict(),
                           geometry.peak_gap(params.lam, params.t, params.A))
        elif ranges is not None and not in_ranges(values, ranges):
            ok = False
            logger.warning("proposed design %s lies outside the design ranges %s",
                           geometry.DesignParams.from_array(values).to_dict(), ranges)

        x = params.as_array()[None, :]
        predicted = mechanics.PropertyCurves(strain_grid=target_curves.strain_grid,
                                             nu=surrogates['nu'].predict(x)[0],
                                             sigma=surrogates['sigma'].predict(x)[0])

        groups.append(params)
        raw_params.append(geometry.DesignParams.from_array(values))
        valid.append(ok)
        curves.append(predicted)
        mae_nu.append(_channel_mae(target_curves.nu, predicted.nu))
        mae_sigma.append(_channel_mae(target_curves.sigma, predicted.sigma))

    if not all(valid):
        logger.warning("%d of %d proposed design groups are invalid", valid.count(False), len(valid))

    return DesignProposal(groups=groups, raw_groups=raw_params, valid=valid, curves=curves, mae_nu=mae_nu,
                          mae_sigma=mae_sigma, rescaled_to=rescale_to, config=config or {})

# }
