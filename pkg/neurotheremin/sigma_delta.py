"""Sigma-delta spike communication for small feed-forward networks.

A layer's activations leave it as graded spikes carrying the change since
the last transmitted value (delta encoding); the next layer rebuilds the
activations by summing the spikes it received (sigma decoding).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np
from scipy import sparse

from neurotheremin.errors import CodecError, StructuralError

logger = logging.getLogger(__name__)

ACTIVATIONS = {
    'relu': lambda x: np.maximum(x, 0.0),
    'identity': lambda x: x,
}


class GradedSpike(NamedTuple):
    """Spike message with a signed magnitude."""

    address: int
    value: float


class SdState:
    """Encoder memory: the last transmitted activation of every neuron.

    Parameters
    ----------
    size : int
        Number of neurons, fixed after creation.

    """

    def __init__(self, size):
        if size < 1:
            raise StructuralError('encoder needs at least one neuron')
        self.size = int(size)
        self.last_sent = np.zeros(self.size)

    def reset(self):
        self.last_sent[:] = 0.0

    def __repr__(self):
        return 'SdState(size=%d)' % self.size


def delta_encode_arrays(state, activations, threshold):
    """Vectorized :func:`delta_encode`.

    Returns
    -------
    addresses : 1d int64 array
    values : 1d float array
        Residual ``a_i - last_sent_i`` of every spiking neuron.

    """
    a = np.asarray(activations, dtype=float).ravel()
    if a.size != state.size:
        raise StructuralError('activation size %d does not match encoder '
                              'size %d' % (a.size, state.size))
    if threshold < 0:
        raise StructuralError('threshold must be non-negative')
    delta = a - state.last_sent
    if threshold > 0:
        fire = np.abs(delta) >= threshold
    else:
        fire = delta != 0
    addresses = np.flatnonzero(fire)
    values = delta[addresses]
    state.last_sent[addresses] = a[addresses]
    return addresses, values


def delta_encode(state, activations, threshold):
    """Emit graded spikes for neurons whose activation moved by ``threshold``.

    Parameters
    ----------
    state : SdState
        Updated in place for every neuron that spikes.
    activations : 1d array
        Current activations, same size as the state.
    threshold : float
        Zero means any change spikes.

    Returns
    -------
    spikes : list of GradedSpike

    """
    addresses, values = delta_encode_arrays(state, activations, threshold)
    return [GradedSpike(int(i), float(v)) for i, v in zip(addresses, values)]


def sigma_decode_arrays(accumulator, addresses, values):
    """Add ``values`` at ``addresses`` to a copy of ``accumulator``."""
    acc = np.array(accumulator, dtype=float, copy=True)
    addresses = np.asarray(addresses, dtype=np.int64)
    if addresses.size and (addresses.min() < 0
                           or addresses.max() >= acc.size):
        raise StructuralError('spike address out of range for %d neurons'
                              % acc.size)
    np.add.at(acc, addresses, np.asarray(values, dtype=float))
    return acc


def sigma_decode(accumulator, spikes):
    """Accumulate graded spikes; returns the updated copy."""
    if not spikes:
        return np.array(accumulator, dtype=float, copy=True)
    addresses, values = zip(*spikes)
    return sigma_decode_arrays(accumulator, addresses, values)


# ---------------------------------------------------------------------------
# Networks

@dataclass(frozen=True, eq=False)
class Layer:
    """Affine map followed by an activation.

    ``weights`` has shape ``(n_out, n_in)`` and may be a scipy sparse
    matrix (convolutions).
    """

    weights: object
    bias: np.ndarray
    activation: str = 'relu'

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise StructuralError('unknown activation %r' % self.activation)
        if len(self.weights.shape) != 2:
            raise StructuralError('weights must be a matrix')
        bias = np.asarray(self.bias, dtype=float).ravel()
        object.__setattr__(self, 'bias', bias)
        if bias.size != self.weights.shape[0]:
            raise StructuralError('bias size %d does not match %d outputs'
                                  % (bias.size, self.weights.shape[0]))
        data = self.weights.data if sparse.issparse(self.weights) \
            else np.asarray(self.weights)
        if not (np.all(np.isfinite(data)) and np.all(np.isfinite(bias))):
            raise StructuralError('non-finite layer parameters')

    @property
    def n_in(self):
        return self.weights.shape[1]

    @property
    def n_out(self):
        return self.weights.shape[0]

    def __call__(self, x):
        return ACTIVATIONS[self.activation](self.weights @ x + self.bias)

    def norm_inf(self):
        """Maximum absolute row sum of the weights."""
        w = abs(self.weights)
        return float(np.max(np.asarray(w.sum(axis=1)).ravel()))


@dataclass(frozen=True, eq=False)
class DenseNet:
    """Ordered layers with compatible dimensions."""

    layers: Tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, 'layers', layers)
        if not layers:
            raise StructuralError('network without layers')
        for k in range(1, len(layers)):
            if layers[k].n_in != layers[k - 1].n_out:
                raise StructuralError(
                    'layer %d expects %d inputs, layer %d gives %d'
                    % (k, layers[k].n_in, k - 1, layers[k - 1].n_out))

    @property
    def n_in(self):
        return self.layers[0].n_in

    @property
    def n_out(self):
        return self.layers[-1].n_out


def random_net(sizes, seed, activation='relu', scale=None):
    """Random dense network, e.g. ``sizes=(8, 16, 4)`` for two layers."""
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        s = 1.0 / np.sqrt(n_in) if scale is None else scale
        layers.append(Layer(rng.normal(0.0, s, size=(n_out, n_in)),
                            rng.normal(0.0, s, size=n_out), activation))
    return DenseNet(layers)


def _check_input(net, x):
    x = np.asarray(x, dtype=float).ravel()
    if x.size != net.n_in:
        raise StructuralError('input size %d does not match network input %d'
                              % (x.size, net.n_in))
    return x


def dense_forward(net, x):
    """Reference forward pass without spike communication."""
    x = _check_input(net, x)
    for layer in net.layers:
        x = layer(x)
    return x


def reconstruction_bound(net, threshold):
    """Elementwise bound on ``|sd_forward - dense_forward|``.

    Every layer output is delta encoded, so the error after layer k is
    ``||W_k||_inf * e_(k-1) + threshold`` with ``e_0 = 0``.
    """
    bound = 0.0
    for layer in net.layers:
        bound = layer.norm_inf() * bound + threshold
    return bound


class SdRunner:
    """Step-by-step sigma-delta execution of a network.

    The input vector feeds the first layer directly; the output of every
    layer, the last included, crosses a delta encoder and a sigma decoder.

    Parameters
    ----------
    net : DenseNet
    threshold : float

    """

    def __init__(self, net, threshold):
        if threshold < 0:
            raise StructuralError('threshold must be non-negative')
        self.net = net
        self.threshold = float(threshold)
        self.encoders = [SdState(layer.n_out) for layer in net.layers]
        self.decoded = [np.zeros(layer.n_out) for layer in net.layers]
        self.spike_counts = [0] * len(net.layers)

    def reset(self):
        for enc, acc in zip(self.encoders, self.decoded):
            enc.reset()
            acc[:] = 0.0
        self.spike_counts = [0] * len(self.net.layers)

    def step(self, x):
        """Advance one step; returns the decoded network output."""
        signal = _check_input(self.net, x)
        for k, layer in enumerate(self.net.layers):
            addresses, values = delta_encode_arrays(
                self.encoders[k], layer(signal), self.threshold)
            self.spike_counts[k] += int(addresses.size)
            self.decoded[k] = sigma_decode_arrays(self.decoded[k],
                                                  addresses, values)
            signal = self.decoded[k]
        return signal.copy()

    def total_spikes(self):
        return int(sum(self.spike_counts))


def sd_forward(net, inputs, threshold):
    """Run a sequence through the network with spike communication.

    Parameters
    ----------
    net : DenseNet
    inputs : sequence of 1d arrays
    threshold : float

    Returns
    -------
    outputs : list of 1d arrays
        Decoded output at every step.
    spike_counts : list of int
        Total spikes sent by each layer.

    """
    runner = SdRunner(net, threshold)
    outputs = [runner.step(x) for x in inputs]
    logger.debug('sd_forward: %d steps, spikes per layer %s', len(outputs),
                 runner.spike_counts)
    return outputs, list(runner.spike_counts)


def conv2d_as_dense(kernel, shape):
    """Zero-padded 'same' 2D convolution as a sparse matrix.

    Parameters
    ----------
    kernel : 2d array with odd side lengths
    shape : (height, width) of the input grid

    Returns
    -------
    matrix : scipy.sparse.csr_matrix, shape (h*w, h*w)
        ``matrix @ x.ravel()`` equals
        ``scipy.signal.convolve2d(x, kernel, mode='same').ravel()``.

    """
    kernel = np.asarray(kernel, dtype=float)
    kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise StructuralError('convolution kernel sides must be odd')
    height, width = shape
    ii, jj = np.mgrid[0:height, 0:width]
    rows, cols, vals = [], [], []
    for m in range(kh):
        for n in range(kw):
            if kernel[m, n] == 0:
                continue
            si = ii + kh // 2 - m
            sj = jj + kw // 2 - n
            ok = (si >= 0) & (si < height) & (sj >= 0) & (sj < width)
            rows.append((ii * width + jj)[ok])
            cols.append((si * width + sj)[ok])
            vals.append(np.full(int(ok.sum()), kernel[m, n]))
    size = height * width
    if not rows:
        return sparse.csr_matrix((size, size))
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, size))


# ---------------------------------------------------------------------------
# Text weight files
#
#   # comment
#   LAYER <rows> <cols> <activation>
#   <cols values>            (rows lines, row-major)
#   BIAS <rows values>

def format_net(net):
    """Text form of a network's weights."""
    lines = []
    for layer in net.layers:
        w = layer.weights.toarray() if sparse.issparse(layer.weights) \
            else np.asarray(layer.weights)
        lines.append('LAYER %d %d %s' % (w.shape[0], w.shape[1],
                                         layer.activation))
        lines.extend(' '.join(repr(float(v)) for v in row) for row in w)
        lines.append('BIAS ' + ' '.join(repr(float(v)) for v in layer.bias))
    return '\n'.join(lines) + '\n'


def parse_net(text):
    """Parse the text weight format.

    Raises
    ------
    CodecError
        Malformed header, wrong number of values, or missing bias line.

    """
    lines = [(n, ln.strip()) for n, ln in enumerate(text.splitlines(), 1)
             if ln.strip() and not ln.strip().startswith('#')]
    layers = []
    pos = 0
    while pos < len(lines):
        lineno, header = lines[pos]
        parts = header.split()
        if len(parts) != 4 or parts[0] != 'LAYER':
            raise CodecError('line %d: expected LAYER header' % lineno)
        try:
            rows, cols = int(parts[1]), int(parts[2])
        except ValueError:
            raise CodecError('line %d: bad layer dimensions' % lineno)
        if rows < 1 or cols < 1:
            raise CodecError('line %d: empty layer' % lineno)
        block = lines[pos + 1:pos + 1 + rows]
        if len(block) != rows or pos + 1 + rows >= len(lines):
            raise CodecError('line %d: truncated layer' % lineno)
        weights = np.array([_floats(n, ln, cols) for n, ln in block])
        b_lineno, b_line = lines[pos + 1 + rows]
        if not b_line.startswith('BIAS'):
            raise CodecError('line %d: expected BIAS' % b_lineno)
        bias = _floats(b_lineno, b_line[4:], rows)
        try:
            layers.append(Layer(weights, bias, parts[3]))
        except StructuralError as err:
            raise CodecError('line %d: %s' % (lineno, err))
        pos += rows + 2
    try:
        return DenseNet(layers)
    except StructuralError as err:
        raise CodecError(str(err))


def _floats(lineno, text, count):
    try:
        values = [float(v) for v in text.split()]
    except ValueError:
        raise CodecError('line %d: not a number' % lineno)
    if len(values) != count:
        raise CodecError('line %d: expected %d values, got %d'
                         % (lineno, count, len(values)))
    return values


def load_net(path):
    with open(path) as fobj:
        return parse_net(fobj.read())


def save_net(path, net):
    with open(path, 'w') as fobj:
        fobj.write(format_net(net))
