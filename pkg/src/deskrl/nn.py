"""Dense feed-forward networks with exact reverse-mode gradients and Adam.

Everything is double precision and deterministic given inputs and seeds.
The topology is a fixed MLP (no general computation graph): that covers
every agent in scope and keeps the gradient code fully testable against
finite differences.
"""

from __future__ import annotations

import struct

import numpy as np

ACTIVATIONS = ("tanh", "relu", "linear", "softmax")

WEIGHT_MAGIC = b"DKNN"
WEIGHT_VERSION = 1


def activation(name):
    """Return the forward function for a named activation."""
    if name not in ACTIVATIONS:
        raise ValueError(f"unknown activation {name!r}")
    return {
        "tanh": np.tanh,
        "relu": lambda z: np.maximum(z, 0.0),
        "linear": lambda z: z,
        "softmax": softmax,
    }[name]


def softmax(z):
    """Row-wise softmax, shifted for stability."""
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def loss_fn(name):
    """Return (loss, dloss_dy) for the named scalar loss over a batch output."""
    if name == "sum":
        return (lambda y: float(y.sum()),
                lambda y: np.ones_like(y))
    if name == "mse":
        return (lambda y: float((y ** 2).mean()),
                lambda y: 2.0 * y / y.size)
    raise ValueError(f"unknown loss {name!r}")


class Grads:
    """Per-layer weight/bias gradients, shapes matching the owning Mlp."""

    def __init__(self, weights, biases):
        self.weights = weights
        self.biases = biases

    def as_list(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


class Mlp:
    """Fully-connected network: list of (weights out x in, bias, activation)."""

    def __init__(self, sizes, activations, weights, biases):
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        for act in activations[:-1]:
            if act == "softmax":
                raise ValueError("softmax is permitted only as the final activation")
        for act in activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        self.sizes = list(sizes)
        self.activations = list(activations)
        self.weights = weights
        self.biases = biases

    @property
    def n_layers(self):
        return len(self.weights)

    def params_list(self):
        """Flat parameter list in (W0, b0, W1, b1, ...) order."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self):
        return Mlp(self.sizes, self.activations,
                   [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases])


def mlp_init(sizes, activations, scheme="xavier_uniform", rng=None) -> Mlp:
    """Build an Mlp with weights drawn per `scheme` and zero biases."""
    if rng is None:
        rng = np.random.default_rng()
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if scheme == "xavier_uniform":
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        elif scheme == "orthogonal":
            a = rng.standard_normal((max(fan_out, fan_in), min(fan_out, fan_in)))
            q, r = np.linalg.qr(a)
            q = q * np.sign(np.diag(r))  # make the factorization unique
            w = q if q.shape == (fan_out, fan_in) else q.T
        else:
            raise ValueError(f"unknown init scheme {scheme!r}")
        weights.append(np.ascontiguousarray(w, dtype=np.float64))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return Mlp(sizes, activations, weights, biases)


def mlp_forward(net: Mlp, x):
    """Forward pass on a batch (n x d_in). Returns (y, cache) for backward."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != net.sizes[0]:
        raise ValueError(f"input dim {x.shape[1]} != expected {net.sizes[0]}")
    cache = []
    a = x
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = a @ w.T + b
        out = activation(act)(z)
        cache.append((a, z, out))
        a = out
    return a, cache


def mlp_backward(net: Mlp, cache, dL_dy):
    """Exact gradients of a sum-over-batch loss; returns (Grads, dL_dx)."""
    if len(cache) != net.n_layers:
        raise ValueError("cache does not match network depth")
    d = np.asarray(dL_dy, dtype=np.float64)
    d = np.atleast_2d(d)
    gw = [None] * net.n_layers
    gb = [None] * net.n_layers
    for k in range(net.n_layers - 1, -1, -1):
        a_in, z, out = cache[k]
        if d.shape != out.shape:
            raise ValueError("upstream gradient shape does not match cache")
        act = net.activations[k]
        if act == "tanh":
            dz = d * (1.0 - out ** 2)
        elif act == "relu":
            dz = d * (z > 0.0)  # subgradient at 0 is 0
        elif act == "linear":
            dz = d
        else:  # softmax
            dz = out * (d - (d * out).sum(axis=1, keepdims=True))
        gw[k] = dz.T @ a_in
        gb[k] = dz.sum(axis=0)
        d = dz @ net.weights[k]
    return Grads(gw, gb), d


class AdamState:
    """First/second-moment accumulators for a list of parameter arrays."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps


def adam_step(state: AdamState, params, grads, lr):
    """One bias-corrected Adam update, in place on `params`."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient in Adam step")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g ** 2
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def polyak_update(target: Mlp, source: Mlp, tau):
    """target <- (1 - tau) * target + tau * source, element-wise."""
    if target.sizes != source.sizes or target.activations != source.activations:
        raise ValueError("polyak requires identical architectures")
    for pt, ps in zip(target.params_list(), source.params_list()):
        pt *= 1.0 - tau
        pt += tau * ps


def clip_grads(grads, max_norm):
    """Scale gradient arrays in place so the global L2 norm is <= max_norm."""
    total = 0.0
    for g in grads:
        total += float((g ** 2).sum())
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


def grad_check(net: Mlp, x, loss="mse", h=1e-6):
    """Max scaled error of backprop vs central finite differences.

    Error per parameter is |analytic - fd| / max(1, |analytic|, |fd|),
    taken over every weight and bias.
    """
    loss_of, dloss = loss_fn(loss)
    y, cache = mlp_forward(net, x)
    grads, _ = mlp_backward(net, cache, dloss(y))
    worst = 0.0
    for p, g in zip(net.params_list(), grads.as_list()):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lo_hi = loss_of(mlp_forward(net, x)[0])
            flat[i] = orig - h
            lo_lo = loss_of(mlp_forward(net, x)[0])
            flat[i] = orig
            fd = (lo_hi - lo_lo) / (2.0 * h)
            err = abs(gflat[i] - fd) / max(1.0, abs(gflat[i]), abs(fd))
            if err > worst:
                worst = err
    return worst


_ACT_CODES = {name: i for i, name in enumerate(ACTIVATIONS)}
_ACT_NAMES = {i: name for name, i in _ACT_CODES.items()}


def save_weights(net: Mlp, path):
    """Persist a network as a flat little-endian binary file."""
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<II", WEIGHT_VERSION, net.n_layers))
        for w, act in zip(net.weights, net.activations):
            out_dim, in_dim = w.shape
            fh.write(struct.pack("<III", out_dim, in_dim, _ACT_CODES[act]))
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_weights(path) -> Mlp:
    """Load a network saved by save_weights."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != WEIGHT_MAGIC:
            raise ValueError(f"bad magic {magic!r} in weight file")
        version, n_layers = struct.unpack("<II", fh.read(8))
        if version != WEIGHT_VERSION:
            raise ValueError(f"unsupported weight file version {version}")
        dims, acts = [], []
        for _ in range(n_layers):
            out_dim, in_dim, code = struct.unpack("<III", fh.read(12))
            dims.append((out_dim, in_dim))
            acts.append(_ACT_NAMES[code])
        weights, biases = [], []
        for out_dim, in_dim in dims:
            w = np.frombuffer(fh.read(8 * out_dim * in_dim), dtype="<f8")
            weights.append(w.reshape(out_dim, in_dim).astype(np.float64))
            b = np.frombuffer(fh.read(8 * out_dim), dtype="<f8")
            biases.append(b.astype(np.float64))
    sizes = [dims[0][1]] + [d[0] for d in dims]
    return Mlp(sizes, acts, weights, biases)
