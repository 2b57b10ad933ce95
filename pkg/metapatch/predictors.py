"""
Forward surrogates: dense networks mapping the design variables (lambda, t, A) to the 30 point Poisson's ratio or
stress curve.

By default the network sees the logarithm of the design variables and predicts asinh(y / y_ref), with y_ref the
median magnitude of the training curves per strain level. Both are standardised with scalers fitted on the training
split only. The training split is extended with scaled copies (n lambda, n t, n A) of its designs that stay inside
the sampled ranges: the tension test gives such copies the same curves. Scores are reported in physical units.
"""

import logging

import numpy as np

from sklearn import preprocessing

from metapatch import defaults, fileio, geometry, neural
from metapatch.sampling import DEFAULT_RANGES

logger = logging.getLogger(__name__)

TARGETS = ('nu', 'sigma')

TARGET_UNITS = {'nu': '-', 'sigma': 'kPa'}

# designs are floored at this value before taking the logarithm
LOG_FLOOR = 1e-9


def augment_by_scaling(X, Y, ranges=None, copies=4, seed=3):
    """
    Add scaled copies of designs with unchanged curves.

    The factor of every copy is drawn log-uniformly from the factors that keep all three variables inside the
    ranges. Designs that can not be scaled by more than 1 % either way are not copied.

    :param X: (n, 3) designs in mm
    :param Y: (n, 30) curves
    :return: (X, Y) with the originals first
    """
    X, Y = np.atleast_2d(np.asarray(X, dtype=float)), np.atleast_2d(np.asarray(Y, dtype=float))
    if copies <= 0 or len(X) == 0:
        return X, Y

    ranges = ranges or DEFAULT_RANGES
    low = np.array([ranges[k][0] for k in geometry.DESIGN_VARIABLES], dtype=float)
    high = np.array([ranges[k][1] for k in geometry.DESIGN_VARIABLES], dtype=float)
    f_min = np.max(low / X, axis=1)
    f_max = np.min(high / X, axis=1)
    keep = f_max > 1.01 * f_min

    rng = np.random.default_rng(seed)
    u = rng.uniform(size=(copies, len(X)))
    factors = np.exp(np.log(f_min) + u * (np.log(f_max) - np.log(f_min)))

    X_aug = [X] + [X[keep] * factors[c, keep, None] for c in range(copies)]
    Y_aug = [Y] + [Y[keep]] * copies
    return np.vstack(X_aug), np.vstack(Y_aug)


class CurvePredictor:
    """
    Surrogate for one property curve.

    :param setup: the ``forward`` section of a pipeline setup (defaults are added)
    :param target: 'nu' or 'sigma'
    :param dataset: sampling.Dataset holding the split used for fitting
    :param saved_model: path of a checkpoint to load instead
    """

    def __init__(self, setup=None, target='nu', dataset=None, saved_model=None, seed=3):

        self.setup = None
        self.target = target
        self.processors = None
        self.network = None
        self.history = None
        self.metadata = {}

        self.train_data = None
        self.val_data = None
        self.test_data = None

        if saved_model is not None:
            self.load_model(saved_model)
        else:
            self.make_from_setup(setup or {}, target=target, dataset=dataset, seed=seed)

    # { Transforms

    @property
    def _log_features(self):
        return self.setup.get('feature_transform') == 'log'

    @property
    def _asinh_targets(self):
        return self.setup.get('target_transform') == 'asinh'

    @property
    def _reference(self):
        return np.asarray(self.metadata['target_reference'], dtype=float)

    def _process_features(self, x, inverse=False):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p = self.processors['features']
        if inverse:
            x = p.inverse_transform(x)
            return np.exp(x) if self._log_features else x
        if self._log_features:
            x = np.log(np.maximum(x, LOG_FLOOR))
        return p.transform(x)

    def _process_targets(self, y, inverse=False):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        p = self.processors['targets']
        if inverse:
            y = p.inverse_transform(y)
            return self._reference * np.sinh(y) if self._asinh_targets else y
        if self._asinh_targets:
            y = np.arcsinh(y / self._reference)
        return p.transform(y)

    def feature_derivative(self, x):
        """d(standardised input) / d(design), element wise, shape (n, 3)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        scale = self.processors['features'].scale_
        if self._log_features:
            return 1. / (np.maximum(x, LOG_FLOOR) * scale)
        return np.broadcast_to(1. / scale, x.shape)

    def target_derivative(self, y_std):
        """d(curve in physical units) / d(standardised output), element wise, shape (n, 30)."""
        y_std = np.atleast_2d(np.asarray(y_std, dtype=float))
        p = self.processors['targets']
        if self._asinh_targets:
            return self._reference * np.cosh(p.inverse_transform(y_std)) * p.scale_
        return np.broadcast_to(p.scale_, y_std.shape)

    # }

    # { Learning and predicting

    def training_arrays(self):
        """Training split extended with its scaled copies, in physical units."""
        X, Y = self.train_data
        return augment_by_scaling(X, Y, ranges=self.metadata.get('ranges'), copies=self.setup.get('augment', 0),
                                  seed=self.metadata.get('seed', 3))

    def fit(self, epochs=None, patience=None, learning_rate=None, verbose=False):
        """
        Train on the (extended) training split with early stopping on the validation split.

        :return: the training history (DataFrame with loss and val_loss in standardised units)
        """
        epochs = epochs if epochs is not None else self.setup['epochs']
        patience = patience if patience is not None else self.setup['patience']
        learning_rate = learning_rate if learning_rate is not None else self.setup['learning_rate']

        X_train, Y_train = self.training_arrays()
        X = self._process_features(X_train)
        Y = self._process_targets(Y_train)

        validation_loss = None
        if len(self.val_data[0]):
            X_val = self._process_features(self.val_data[0])
            Y_val = self._process_targets(self.val_data[1])

            def validation_loss(net):
                return float(np.mean((net.forward(X_val) - Y_val) ** 2))

        history = neural.train_network(self.network, lambda net: net.mse_gradients(X, Y),
                                       validation_loss=validation_loss, epochs=epochs, patience=patience,
                                       optimizer_kwargs=defaults.get_optimizer('adam', {'lr': learning_rate}),
                                       reduce_lr=neural.plateau_schedule(self.setup),
                                       name='{} surrogate'.format(self.target))

        self.history = history
        self.metadata.update(epochs=len(history), best_epoch=int(history.attrs.get('best_epoch', -1)),
                             final_loss=float(history['loss'].iloc[-1]),
                             best_val_loss=float(history['val_loss'].min()), n_train=len(X_train))

        if verbose:
            self.print_score()

        return history

    def predict(self, x):
        """Curves in physical units for designs (lambda, t, A) in mm, shape (n, 30)."""
        return self._process_targets(self.network.forward(self._process_features(x)), inverse=True)

    def predict_standardized(self, x_std):
        """Standardised outputs for standardised inputs, the space the network is trained in."""
        return self.network.forward(np.atleast_2d(x_std))

    def jacobian(self, x_std):
        """d(curve in physical units) / d(standardised input), shape (n, 30, 3)."""
        x_std = np.atleast_2d(x_std)
        J = self.network.input_jacobian(x_std)
        return J * self.target_derivative(self.network.forward(x_std))[:, :, None]

    def score(self, data=None):
        """
        :param data: (X, Y) in physical units, default the test split
        :return: dict with r2 and mae (in the target unit)
        """
        X, Y = data if data is not None else self.test_data
        Y_pred = self.predict(X)
        return {'r2': neural.r2_score(Y, Y_pred), 'mae': neural.mae(Y, Y_pred)}

    # }

    # { Reporting

    def print_score(self):
        """
        prints R2 and MAE of the current model on the training, validation and test split.
        """
        print("Training results for {} ({})\n{:12s}  {:>8s}  {:>10s}".format(
            self.target, TARGET_UNITS[self.target], 'split', 'R2', 'MAE'))
        print("----------------------------------")
        for name, data in (('train', self.train_data), ('val', self.val_data), ('test', self.test_data)):
            if data is None or len(data[0]) < 2:
                continue
            s = self.score(data)
            print("{:12s}  {:8.4f}  {:10.4f}".format(name, s['r2'], s['mae']))

    def scores(self):
        """R2 and MAE per split as a flat dictionary."""
        res = {}
        for name, data in (('train', self.train_data), ('val', self.val_data), ('test', self.test_data)):
            if data is None or len(data[0]) < 2:
                continue
            s = self.score(data)
            res[name + '_r2'], res[name + '_mae'] = s['r2'], s['mae']
        return res

    # }

    # { Input and output

    def set_data(self, dataset):
        """Attach the train / val / test split of a dataset, in physical units."""
        if dataset is None:
            return
        self.train_data = (dataset.inputs('train'), dataset.targets(self.target, 'train'))
        self.val_data = (dataset.inputs('val'), dataset.targets(self.target, 'val'))
        self.test_data = (dataset.inputs('test'), dataset.targets(self.target, 'test'))

    def _make_preprocessors_from_setup(self):
        # scalers are fitted on the training data only
        if self.train_data is None:
            return
        X, Y = self.training_arrays()
        if self._asinh_targets:
            reference = np.median(np.abs(Y), axis=0)
            self.metadata['target_reference'] = np.where(reference > 0, reference, 1.).tolist()
            Y = np.arcsinh(Y / self._reference)
        if self._log_features:
            X = np.log(X)
        self.processors = {
            'features': preprocessing.StandardScaler().fit(X),
            'targets': preprocessing.StandardScaler().fit(Y),
        }

    def _make_model_from_setup(self, seed):
        n_out = self.train_data[1].shape[1] if self.train_data is not None else 30
        spec = neural.NetworkSpec(layer_sizes=[3] + list(self.setup['layers']) + [n_out], seed=seed)
        self.network = neural.Network(spec)

    def make_from_setup(self, setup, target='nu', dataset=None, seed=3):
        if target not in TARGETS:
            raise ValueError("target must be one of {}, got {}".format(TARGETS, target))
        self.setup = defaults.add_defaults_to_section('forward', setup)
        self.target = target
        self.metadata = {'target': target, 'seed': seed}
        if dataset is not None:
            self.metadata.update(strain_grid=dataset.strain_grid.tolist(), seeds=dict(dataset.seeds),
                                 ranges={k: list(v) for k, v in dataset.ranges.items()})

        self.set_data(dataset)
        self._make_preprocessors_from_setup()
        self._make_model_from_setup(seed)

    def checkpoint(self):
        return fileio.checkpoint_dict(self.network, self.processors, setup=self.setup, metadata=self.metadata)

    def fingerprint(self):
        """Hash of weights, scalers and metadata, used to check a surrogate was not modified."""
        return fileio.fingerprint(self.checkpoint())

    def save_model(self, filename, include_history=False):
        history = self.history if include_history else None
        fileio.save_checkpoint(filename, self.network, self.processors, setup=self.setup, metadata=self.metadata,
                               history=history)

    def load_model(self, filename):
        network, processors, setup, metadata, history = fileio.load_checkpoint(filename)
        self.network = network
        self.processors = processors
        self.setup = setup
        self.metadata = metadata
        self.history = history
        self.target = metadata.get('target', self.target)

    def save_training_history(self, filename):
        self.history.to_csv(filename)

    # }


def train_forward_model(dataset, target, hyper=None, seed=3, verbose=False):
    """
    Fit a surrogate for one channel on the dataset split.

    :param dataset: sampling.Dataset
    :param target: 'nu' or 'sigma'
    :param hyper: ``forward`` setup section (layers, learning_rate, epochs, patience, transforms, augment)
    :return: CurvePredictor
    """
    predictor = CurvePredictor(setup=hyper or {}, target=target, dataset=dataset, seed=seed)
    predictor.fit(verbose=verbose)
    logger.info("%s surrogate trained in %d epochs on %d designs, best epoch %d", target, len(predictor.history),
                predictor.metadata['n_train'], predictor.metadata['best_epoch'])
    return predictor
