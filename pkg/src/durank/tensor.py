"""Dense numeric kernel for the two fixed MLP topologies.

Parameters are plain numpy arrays. A layer computes ``x @ W + b`` with
``W`` stored as ``(fan_in, fan_out)``, so a batch of row vectors goes through
in one matmul. Hidden layers use a rectifier, the output layer is linear.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError


@dataclass
class MlpParams:
    weights: list
    biases: list

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def tensors(self):
        """Flat list ``[W0, b0, W1, b1, ...]``; the order used everywhere."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_tensors(cls, tensors):
        return cls(list(tensors[0::2]), list(tensors[1::2]))

    def copy(self):
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype):
        return MlpParams([w.astype(dtype) for w in self.weights],
                         [b.astype(dtype) for b in self.biases])

    def zeros_like(self):
        return MlpParams([np.zeros_like(w) for w in self.weights],
                         [np.zeros_like(b) for b in self.biases])

    def num_params(self):
        return sum(t.size for t in self.tensors())


def init_mlp(sizes, rng, dtype=np.float32):
    """Glorot-uniform weights, zero biases."""
    if len(sizes) < 2:
        raise ShapeError("an MLP needs at least an input and an output width")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MlpParams(weights, biases)


def zero_mlp(sizes, dtype=np.float32):
    return MlpParams([np.zeros((a, b), dtype=dtype) for a, b in zip(sizes[:-1], sizes[1:])],
                     [np.zeros(b, dtype=dtype) for b in sizes[1:]])


@dataclass
class ForwardCache:
    inputs: np.ndarray
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)
    squeeze: bool = False


def mlp_forward(params: MlpParams, x):
    """Run the network on one vector or a ``(batch, fan_in)`` array.

    Returns ``(output, cache)``; a 1-D input yields a 1-D output.
    """
    x = np.asarray(x, dtype=params.dtype)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != params.weights[0].shape[0]:
        raise ShapeError(f"input shape {x.shape} does not match fan-in {params.weights[0].shape[0]}")
    cache = ForwardCache(inputs=h, squeeze=squeeze)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        h = z if i == last else np.maximum(z, 0)
        cache.pre.append(z)
        cache.post.append(h)
    out = h[0] if squeeze else h
    return out, cache


def mlp_backward(params: MlpParams, cache: ForwardCache, upstream):
    """Backpropagate ``upstream`` (d loss / d output) through a cached forward pass.

    The rectifier subgradient at exactly zero is taken as zero.
    Returns ``(grads, input_grad)`` with ``grads`` shaped like ``params``.
    """
    g = np.asarray(upstream, dtype=params.dtype)
    if cache.squeeze:
        g = g[None, :]
    if len(cache.pre) != len(params.weights) or g.shape != cache.post[-1].shape:
        raise ShapeError(f"upstream shape {g.shape} does not match the cached forward pass")
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    last = len(params.weights) - 1
    for i in range(last, -1, -1):
        if i != last:
            g = g * (cache.pre[i] > 0)
        prev = cache.post[i - 1] if i > 0 else cache.inputs
        if prev.shape[1] != params.weights[i].shape[0]:
            raise ShapeError("stale cache: layer widths changed since the forward pass")
        gw[i] = prev.T @ g
        gb[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
    input_grad = g[0] if cache.squeeze else g
    return MlpParams(gw, gb), input_grad


def softmax_stable(logits, axis=-1):
    """Softmax via max-subtraction; works along ``axis`` of any array."""
    z = np.asarray(logits)
    if z.size == 0 or z.shape[axis] == 0:
        raise ValueError("softmax of an empty vector")
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite logit passed to softmax")
    if not np.issubdtype(z.dtype, np.floating):
        z = z.astype(np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class OptState:
    velocity: list

    @classmethod
    def zeros_for(cls, *param_sets):
        return cls([np.zeros_like(t) for p in param_sets for t in p.tensors()])


def sgd_momentum_step(params, grads, state: OptState, lr, momentum, weight_decay):
    """One SGD-with-momentum step, in place.

    ``v <- momentum * v + (grad + weight_decay * param)``; ``param <- param - lr * v``.
    ``params`` and ``grads`` may be single ``MlpParams`` or sequences of them;
    ``state`` holds one velocity per tensor across all of them.
    """
    if isinstance(params, MlpParams):
        params, grads = [params], [grads]
    p_tensors = [t for p in params for t in p.tensors()]
    g_tensors = [t for g in grads for t in g.tensors()]
    if len(p_tensors) != len(g_tensors) or len(p_tensors) != len(state.velocity):
        raise ShapeError("parameter, gradient and velocity lists differ in length")
    for p, g, v in zip(p_tensors, g_tensors, state.velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ShapeError(f"shape mismatch {p.shape} / {g.shape} / {v.shape}")
        dt = p.dtype.type
        v *= dt(momentum)
        v += g + dt(weight_decay) * p
        p -= dt(lr) * v
    return params, state


def finite_diff_grad(loss_fn, params, eps=1e-6, coords=None):
    """Central-difference gradient of ``loss_fn(params)`` in float64.

    ``params`` is an ``MlpParams``, a list of arrays, or a single array; the
    result has the same structure. ``coords`` optionally restricts the check to
    ``(tensor_index, flat_index)`` pairs; unchecked entries are left as NaN.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if isinstance(params, MlpParams):
        work = params.astype(np.float64)
        tensors = work.tensors()
        wrap = MlpParams.from_tensors
    elif isinstance(params, (list, tuple)):
        tensors = [np.array(t, dtype=np.float64) for t in params]
        work = tensors
        wrap = list
    else:
        work = np.array(params, dtype=np.float64)
        tensors = [work]
        wrap = lambda ts: ts[0]  # noqa: E731
    grads = [np.full(t.shape, np.nan) for t in tensors]
    if coords is None:
        coords = [(ti, j) for ti, t in enumerate(tensors) for j in range(t.size)]
    for ti, j in coords:
        flat = tensors[ti].reshape(-1)
        orig = flat[j]
        flat[j] = orig + eps
        up = float(loss_fn(work))
        flat[j] = orig - eps
        down = float(loss_fn(work))
        flat[j] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"non-finite loss while differencing tensor {ti} entry {j}")
        grads[ti].reshape(-1)[j] = (up - down) / (2 * eps)
    return wrap(grads)


def relative_error(analytic, numeric, floor=1e-7):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
