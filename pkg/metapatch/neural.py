"""
Minimal dense network engine: fully connected layers with ReLU on the hidden layers, exact backpropagation,
a forward-mode input Jacobian, the Adam optimizer and a full batch training loop with early stopping.

Weights are stored as (n_in, n_out) matrices so a batch of inputs of shape (batch, n_in) is propagated as
``x @ W + b``.
"""

import logging

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from sklearn import metrics

from metapatch.errors import ShapeMismatch, ZeroVariance, NonFiniteLoss

logger = logging.getLogger(__name__)

OUTPUT_ACTIVATIONS = ('identity', 'softplus')


@dataclass
class NetworkSpec:

    layer_sizes: list
    seed: int = 3
    output_activation: str = 'identity'

    def __post_init__(self):
        self.layer_sizes = [int(n) for n in self.layer_sizes]
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ShapeMismatch("a network needs at least an input and an output layer, got {}".format(
                self.layer_sizes))
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError("Output activation {} not recognized.".format(self.output_activation) +
                             "\nAllowed activations: {}".format(OUTPUT_ACTIVATIONS))

    @property
    def n_inputs(self):
        return self.layer_sizes[0]

    @property
    def n_outputs(self):
        return self.layer_sizes[-1]

    def to_dict(self):
        return {'layer_sizes': list(self.layer_sizes), 'seed': int(self.seed),
                'output_activation': self.output_activation}

    @classmethod
    def from_dict(cls, record):
        return cls(**record)


# { Activations

def relu(z):
    return np.maximum(z, 0.)


def softplus(z):
    return np.logaddexp(0., z)


def sigmoid(z):
    return 0.5 * (1. + np.tanh(0.5 * z))


def inverse_softplus(y):
    """x such that softplus(x) = y, for y > 0."""
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))

# }


class Network:
    """
    Dense feed forward network.

    :param spec: NetworkSpec
    :param layers: optional list of (W, b) pairs. When omitted the weights are He-initialised with spec.seed and
                   the biases are zero.
    """

    def __init__(self, spec, layers=None):
        self.spec = spec
        if layers is None:
            layers = self._init_layers(spec)
        self.layers = [(np.array(W, dtype=float), np.array(b, dtype=float)) for W, b in layers]
        self._check_layers()

    @staticmethod
    def _init_layers(spec):
        rng = np.random.default_rng(spec.seed)
        layers = []
        for n_in, n_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
            W = rng.standard_normal((n_in, n_out)) * np.sqrt(2. / n_in)
            layers.append((W, np.zeros(n_out)))
        return layers

    def _check_layers(self):
        sizes = self.spec.layer_sizes
        if len(self.layers) != len(sizes) - 1:
            raise ShapeMismatch("{} layers given for layer sizes {}".format(len(self.layers), sizes))
        for k, (W, b) in enumerate(self.layers):
            if W.shape != (sizes[k], sizes[k + 1]) or b.shape != (sizes[k + 1],):
                raise ShapeMismatch("layer {}: W {} and b {} do not match sizes {} -> {}".format(
                    k, W.shape, b.shape, sizes[k], sizes[k + 1]))

    # { Learning and predicting

    def _as_batch(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.spec.n_inputs:
            raise ShapeMismatch("input of shape {} does not match {} network inputs".format(
                x.shape, self.spec.n_inputs))
        return x, single

    def forward(self, x, return_cache=False):
        """
        Propagate a single input vector or a (batch, n_in) array.

        :param return_cache: also return the pre-activations and activations needed by backward
        """
        a, single = self._as_batch(x)
        activations, pre = [a], []
        last = len(self.layers) - 1
        for k, (W, b) in enumerate(self.layers):
            z = a @ W + b
            pre.append(z)
            if k < last:
                a = relu(z)
            elif self.spec.output_activation == 'softplus':
                a = softplus(z)
            else:
                a = z
            activations.append(a)

        out = a[0] if single else a
        if return_cache:
            return out, {'activations': activations, 'pre': pre}
        return out

    def backward(self, cache, grad_output):
        """
        Reverse mode pass for a given gradient of the loss with respect to the network output.

        :param cache: cache returned by forward(x, return_cache=True)
        :param grad_output: dL/dy, same shape as the batch output
        :return: (list of (dW, db), dL/dx)
        """
        activations, pre = cache['activations'], cache['pre']
        delta = np.asarray(grad_output, dtype=float)
        if delta.ndim == 1:
            delta = delta[None, :]
        if delta.shape != activations[-1].shape:
            raise ShapeMismatch("gradient of shape {} for output of shape {}".format(
                delta.shape, activations[-1].shape))

        if self.spec.output_activation == 'softplus':
            delta = delta * sigmoid(pre[-1])

        grads = [None] * len(self.layers)
        for k in range(len(self.layers) - 1, -1, -1):
            W, _ = self.layers[k]
            grads[k] = (activations[k].T @ delta, delta.sum(axis=0))
            delta = delta @ W.T
            if k > 0:
                delta = delta * (pre[k - 1] > 0)

        return grads, delta

    def mse_gradients(self, x, y):
        """
        Batch mean squared error over all outputs and its exact gradient.

        :return: (loss, list of (dW, db))
        """
        y_hat, cache = self.forward(x, return_cache=True)
        y = np.asarray(y, dtype=float).reshape(np.shape(y_hat))
        residual = np.atleast_2d(y_hat - y)
        loss = float(np.mean(residual ** 2))
        grads, _ = self.backward(cache, 2. * residual / residual.size)
        return loss, grads

    def input_jacobian(self, x):
        """
        Jacobian of the outputs with respect to the inputs, (batch, n_out, n_in), computed in forward mode.
        """
        a, single = self._as_batch(x)
        n = a.shape[0]
        J = np.broadcast_to(np.eye(self.spec.n_inputs), (n, self.spec.n_inputs, self.spec.n_inputs))
        last = len(self.layers) - 1
        for k, (W, b) in enumerate(self.layers):
            z = a @ W + b
            J = np.einsum('ij,bik->bjk', W, J)
            if k < last:
                J = J * (z > 0)[:, :, None]
                a = relu(z)
            elif self.spec.output_activation == 'softplus':
                J = J * sigmoid(z)[:, :, None]
        return J[0] if single else J

    # }

    # { Parameters

    @property
    def parameters(self):
        """Flat list [W0, b0, W1, b1, ...]."""
        return [p for layer in self.layers for p in layer]

    def set_parameters(self, params):
        self.layers = [(np.array(params[2 * k], dtype=float), np.array(params[2 * k + 1], dtype=float))
                       for k in range(len(self.layers))]
        self._check_layers()

    def copy(self):
        return Network(self.spec, layers=[(W.copy(), b.copy()) for W, b in self.layers])

    def to_dict(self):
        return {'spec': self.spec.to_dict(),
                'layers': [{'W': W.tolist(), 'b': b.tolist()} for W, b in self.layers]}

    @classmethod
    def from_dict(cls, record):
        spec = NetworkSpec.from_dict(record['spec'])
        return cls(spec, layers=[(layer['W'], layer['b']) for layer in record['layers']])

    # }


def flatten_gradients(grads):
    return [g for layer in grads for g in layer]


# { Adam

@dataclass
class AdamState:

    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def zeros_like(cls, params):
        return cls(step=0, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """
    One bias corrected Adam update.

    :param params: list of parameter arrays (or floats)
    :param grads: list of gradient arrays, same shapes as params
    :param state: AdamState, use AdamState.zeros_like(params) for the first step
    :return: (updated params, updated state). The inputs are not modified.
    """
    if not state.m:
        state = AdamState.zeros_like(params)
    step = state.step + 1

    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=float)
        m = beta1 * m + (1. - beta1) * g
        v = beta2 * v + (1. - beta2) * g * g
        m_hat = m / (1. - beta1 ** step)
        v_hat = v / (1. - beta2 ** step)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)

    return new_params, AdamState(step=step, m=new_m, v=new_v)

# }


# { Metrics

def _check_shapes(y_true, y_pred):
    y_true, y_pred = np.asarray(y_true, dtype=float), np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape:
        raise ShapeMismatch("y_true {} and y_pred {} differ in shape".format(y_true.shape, y_pred.shape))
    return y_true.ravel(), y_pred.ravel()


def r2_score(y_true, y_pred):
    """Coefficient of determination over all outputs flattened."""
    y_true, y_pred = _check_shapes(y_true, y_pred)
    if np.sum((y_true - y_true.mean()) ** 2) == 0:
        raise ZeroVariance("R2 is undefined for targets without variance")
    return float(metrics.r2_score(y_true, y_pred))


def mae(y_true, y_pred):
    """Mean absolute error, in the units of the targets."""
    y_true, y_pred = _check_shapes(y_true, y_pred)
    return float(metrics.mean_absolute_error(y_true, y_pred))

# }


# { Training

def train_network(network, loss_and_gradients, validation_loss=None, learning_rate=1e-3, epochs=20000,
                  patience=2000, name='network', optimizer_kwargs=None, reduce_lr=None):
    """
    Full batch Adam training with early stopping on the validation loss.

    The network ends in the state with the lowest validation loss (training loss when there is no validation
    function).

    :param network: Network, updated in place
    :param loss_and_gradients: callable(network) -> (loss, list of (dW, db))
    :param validation_loss: callable(network) -> float, or None
    :param patience: stop after this many epochs without improvement of the monitored loss
    :param optimizer_kwargs: keyword arguments of adam_step, as returned by defaults.get_optimizer
    :param reduce_lr: optional dict with factor, patience and min_lr. The learning rate is multiplied with factor
                      when the monitored loss did not improve for patience epochs, and never drops below min_lr.
    :return: history DataFrame indexed by epoch with columns loss, val_loss and lr
    :raises NonFiniteLoss: when the training loss or a gradient stops being finite
    """
    adam_kwargs = dict(optimizer_kwargs or {})
    adam_kwargs.setdefault('lr', learning_rate)

    state = AdamState.zeros_like(network.parameters)
    best_loss, best_epoch = np.inf, -1
    best_params = [p.copy() for p in network.parameters]
    last_reduction = 0

    history = {'loss': [], 'val_loss': [], 'lr': []}
    for epoch in range(epochs):
        loss, grads = loss_and_gradients(network)
        flat = flatten_gradients(grads)
        grad_norm = float(np.sqrt(sum(np.sum(g ** 2) for g in flat)))
        if not np.isfinite(loss) or not np.isfinite(grad_norm):
            raise NonFiniteLoss(epoch, diagnostics={'loss': float(loss), 'grad_norm': grad_norm,
                                                    'learning_rate': adam_kwargs['lr'], 'model': name})

        val_loss = validation_loss(network) if validation_loss is not None else loss
        history['loss'].append(loss)
        history['val_loss'].append(val_loss)
        history['lr'].append(adam_kwargs['lr'])

        if val_loss < best_loss:
            best_loss, best_epoch = val_loss, epoch
            best_params = [p.copy() for p in network.parameters]
        elif epoch - best_epoch >= patience:
            logger.info("%s: early stopping at epoch %d, best epoch %d (val_loss %.4e)",
                        name, epoch, best_epoch, best_loss)
            break
        elif reduce_lr and epoch - max(best_epoch, last_reduction) >= reduce_lr['patience'] \
                and adam_kwargs['lr'] > reduce_lr['min_lr']:
            adam_kwargs['lr'] = max(adam_kwargs['lr'] * reduce_lr['factor'], reduce_lr['min_lr'])
            last_reduction = epoch
            logger.debug("%s: learning rate reduced to %.2e at epoch %d", name, adam_kwargs['lr'], epoch)

        params, state = adam_step(network.parameters, flat, state, **adam_kwargs)
        network.set_parameters(params)

    network.set_parameters(best_params)

    history = pd.DataFrame(history)
    history.index.name = 'epoch'
    history.attrs['best_epoch'] = best_epoch
    return history


def plateau_schedule(setup):
    """reduce_lr argument of train_network from a ``forward`` or ``inverse`` setup section, None when switched off."""
    if not setup.get('reduce_lr'):
        return None
    return {'factor': setup['lr_factor'], 'patience': setup['lr_patience'], 'min_lr': setup['min_lr']}

# }
