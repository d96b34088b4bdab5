"""The convolutional denoiser and its residual score operator.

Complex images are processed as two real channels (real/imag); under this
isometry real inner products match the real part of the complex ones, so
monotonicity statements transfer exactly.  Convolutions use circular padding,
which makes every layer a well-defined linear operator on the torus and lets
dense matrices and per-frequency transfer functions serve as test oracles.

The network is evaluated manually (no autograd): forward passes cache layer
inputs and ReLU masks, from which input Jacobian-vector products and weight
gradients are computed exactly.
"""

from __future__ import annotations

import hashlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .numerics import norm


def _im2col(x, kh, kw):
    """Circular kh x kw patches of x [C, H, W] as a [H*W, C*kh*kw] matrix."""
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)), mode="wrap")
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # [C, H, W, kh, kw]
    return win.transpose(1, 2, 0, 3, 4).reshape(h * w, c * kh * kw)


def conv2d_circular(x, weights):
    """Circular cross-correlation: x [C_in, H, W] -> [C_out, H, W]."""
    c_in, h, w = x.shape
    c_out, c_in_w, kh, kw = weights.shape
    if c_in != c_in_w:
        raise ValueError(f"channel mismatch: input has {c_in}, weights expect {c_in_w}")
    out = _im2col(x, kh, kw) @ weights.reshape(c_out, -1).T  # [HW, C_out]
    return np.ascontiguousarray(out.T).reshape(c_out, h, w)


def _conv_weight_grad(x, dout, kh, kw):
    """d<conv(x, w), dout>/dw for the circular correlation above."""
    c_in, h, w = x.shape
    c_out = dout.shape[0]
    dw = dout.reshape(c_out, h * w) @ _im2col(x, kh, kw)  # [C_out, C_in*K]
    return dw.reshape(c_out, c_in, kh, kw)


def _adjoint_weights(weights):
    # adjoint of circular correlation: swap in/out channels, rotate taps 180
    return weights.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]


class ConvLayer:
    """One convolution layer: real weights [out_ch, in_ch, kh, kw] + bias."""

    def __init__(self, weights, bias):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weights.ndim != 4 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError("weights must be [out_ch, in_ch, kh, kw] with matching bias")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("non-finite layer parameters")
        self._power_vec = {}

    @property
    def shape(self):
        return self.weights.shape

    def apply(self, x):
        return conv2d_circular(x, self.weights) + self.bias[:, None, None]

    def apply_linear(self, x):
        return conv2d_circular(x, self.weights)

    def apply_adjoint(self, y):
        return conv2d_circular(y, _adjoint_weights(self.weights))

    def spectral_norm(self, spatial_shape, iters=20):
        """Operator norm of the (bias-free) conv map by power iteration.

        The iteration vector persists per spatial shape, so repeated calls
        during training warm-start and converge quickly.
        """
        c_out, c_in, kh, kw = self.weights.shape
        key = tuple(spatial_shape)
        v = self._power_vec.get(key)
        if v is None:
            rng = np.random.default_rng(abs(hash(key)) % (2**32))
            v = rng.standard_normal((c_in, *key))
            v /= norm(v)
        sigma = 0.0
        for _ in range(iters):
            u = self.apply_linear(v)
            nu = norm(u)
            if nu == 0.0:
                self._power_vec[key] = v
                return 0.0
            w = self.apply_adjoint(u / nu)
            sigma = norm(w)
            v = w / sigma if sigma > 0 else v
        self._power_vec[key] = v
        return float(sigma)

    def copy(self):
        layer = ConvLayer(self.weights.copy(), self.bias.copy())
        layer._power_vec = {k: v.copy() for k, v in self._power_vec.items()}
        return layer


class NetCache:
    """Activations from one forward pass, consumed by the VJP routines."""

    def __init__(self, inputs, masks, output, input_digest):
        self.inputs = inputs          # per-layer input tensors [C, H, W]
        self.masks = masks            # ReLU masks for all but the last layer
        self.output = output
        self.input_digest = input_digest


def _digest(x):
    return hashlib.sha1(np.ascontiguousarray(x).tobytes()).hexdigest()


def complex_to_channels(x):
    x = np.asarray(x, dtype=np.complex128)
    return np.stack([x.real, x.imag])


def channels_to_complex(a):
    return a[0] + 1j * a[1]


class DenoiserNet:
    """Stack of conv layers with ReLU between (none after the last).

    First-layer input and last-layer output are the 2 real channels of a
    complex image.  ``spatial_shape`` fixes the grid on which layer spectral
    norms are measured.
    """

    def __init__(self, layers, spatial_shape):
        if not layers:
            raise ValueError("need at least one layer")
        if layers[0].shape[1] != 2 or layers[-1].shape[0] != 2:
            raise ValueError("first layer must take 2 channels and last layer emit 2")
        self.layers = list(layers)
        self.spatial_shape = tuple(int(s) for s in spatial_shape)

    @classmethod
    def create(cls, spatial_shape, n_layers=5, hidden=64, kernel=3, seed=0):
        """Xavier-uniform initialized network, biases zero, seeded."""
        rng = np.random.default_rng(seed)
        widths = [2] + [hidden] * (n_layers - 1) + [2] if n_layers > 1 else [2, 2]
        layers = []
        for l in range(n_layers):
            c_in, c_out = widths[l], widths[l + 1]
            fan_in = c_in * kernel * kernel
            fan_out = c_out * kernel * kernel
            a = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-a, a, size=(c_out, c_in, kernel, kernel))
            layers.append(ConvLayer(w, np.zeros(c_out)))
        return cls(layers, spatial_shape)

    @property
    def n_layers(self):
        return len(self.layers)

    # -- forward ------------------------------------------------------------
    def forward_channels(self, a, want_cache=False):
        inputs, masks = [], []
        digest = _digest(a) if want_cache else None
        for l, layer in enumerate(self.layers):
            if want_cache:
                inputs.append(a)
            z = layer.apply(a)
            if l < self.n_layers - 1:
                mask = z > 0
                if want_cache:
                    masks.append(mask)
                a = np.where(mask, z, 0.0)
            else:
                a = z
        if want_cache:
            return a, NetCache(inputs, masks, a, digest)
        return a

    def forward(self, x, want_cache=False):
        """Apply the denoiser to a complex image."""
        a = complex_to_channels(self._check_shape(x))
        if want_cache:
            out, cache = self.forward_channels(a, want_cache=True)
            return channels_to_complex(out), cache
        return channels_to_complex(self.forward_channels(a))

    def score(self, x):
        """Residual operator x - H(x) (the learned noise estimator)."""
        x = self._check_shape(x)
        return x - self.forward(x)

    def _check_shape(self, x):
        x = np.asarray(x, dtype=np.complex128)
        if x.shape != self.spatial_shape:
            raise ValueError(f"expected image of shape {self.spatial_shape}, got {x.shape}")
        return x

    # -- derivatives ----------------------------------------------------------
    def backprop_channels(self, cache, v):
        """Given d<loss>/d<output> = v, return (weight grads, J^T v wrt input)."""
        g = v
        grads = [None] * self.n_layers
        for l in reversed(range(self.n_layers)):
            if l < self.n_layers - 1:
                g = np.where(cache.masks[l], g, 0.0)
            layer = self.layers[l]
            kh, kw = layer.shape[2], layer.shape[3]
            dw = _conv_weight_grad(cache.inputs[l], g, kh, kw)
            db = g.sum(axis=(1, 2))
            grads[l] = (dw, db)
            g = layer.apply_adjoint(g)
        return grads, g

    def _check_cache(self, cache, x=None):
        if x is not None and _digest(complex_to_channels(x)) != cache.input_digest:
            raise ValueError("stale cache: forward input does not match")

    def vjp_input(self, cache, v, x=None):
        """J^T v where J is the input Jacobian at the cached point (complex in/out).

        Pass ``x`` to assert the cache really came from a forward pass at x.
        """
        self._check_cache(cache, x)
        g = complex_to_channels(v)
        for l in reversed(range(self.n_layers)):
            if l < self.n_layers - 1:
                g = np.where(cache.masks[l], g, 0.0)
            g = self.layers[l].apply_adjoint(g)
        return channels_to_complex(g)

    def grad_weights(self, cache, v, x=None):
        """Gradient of <H(x), v>_R with respect to every weight and bias."""
        self._check_cache(cache, x)
        grads, _ = self.backprop_channels(cache, complex_to_channels(v))
        return grads

    # -- spectral control -----------------------------------------------------
    def layer_spectral_norms(self, iters=20):
        return [layer.spectral_norm(self.spatial_shape, iters=iters) for layer in self.layers]

    def spectral_normalize(self, target, iters=20, max_passes=50):
        """Rescale layers so each conv norm is <= target**(1/n_layers).

        Already-compliant layers are left untouched (factor min(1, bound/sigma)).
        Biases do not affect Lipschitz constants and are not modified.  Power
        iterations warm-start per layer; passes repeat until the re-measured
        norms actually satisfy the bound (a single cold 20-step estimate can
        undershoot on fresh random kernels).
        """
        if not 0 < target:
            raise ValueError("target must be positive")
        bound = target ** (1.0 / self.n_layers)
        for _ in range(max_passes):
            dirty = False
            for layer in self.layers:
                sigma = layer.spectral_norm(self.spatial_shape, iters=iters)
                if sigma > bound * (1 + 1e-9):
                    layer.weights *= bound / sigma
                    dirty = True
            if not dirty:
                break
        return self

    # -- parameter plumbing -----------------------------------------------------
    def n_params(self):
        return sum(l.weights.size + l.bias.size for l in self.layers)

    def flat_params(self):
        return np.concatenate([np.concatenate([l.weights.ravel(), l.bias.ravel()]) for l in self.layers])

    def set_flat_params(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.n_params():
            raise ValueError("parameter vector size mismatch")
        off = 0
        for layer in self.layers:
            nw, nb = layer.weights.size, layer.bias.size
            layer.weights = vec[off : off + nw].reshape(layer.weights.shape).copy()
            off += nw
            layer.bias = vec[off : off + nb].copy()
            off += nb
        return self

    @staticmethod
    def flatten_grads(grads):
        return np.concatenate([np.concatenate([dw.ravel(), db.ravel()]) for dw, db in grads])

    def copy(self):
        return DenoiserNet([l.copy() for l in self.layers], self.spatial_shape)
