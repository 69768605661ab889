"""Small MLP engine: ReLU hidden layers, softmax cross-entropy, inverted
dropout, Nesterov momentum.

Parameters live in one flat float64 vector per worker. Layout, layer by
layer: the weight block in row-major order (fan_in x fan_out), then the
bias. The same byte order (little-endian float64) is used on disk.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MlpSpec:
    """Architecture: full layer width list, input and hidden dropout rates."""

    layer_sizes: tuple
    input_dropout: float = 0.0
    hidden_dropout: float = 0.0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("layer_sizes needs at least input and output widths")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer widths must be positive, got {sizes}")
        for name in ("input_dropout", "hidden_dropout"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {p}")


def param_count(spec):
    sizes = spec.layer_sizes
    return sum(fi * fo + fo for fi, fo in zip(sizes[:-1], sizes[1:]))


def param_views(spec, flat):
    """Slice a flat vector into per-layer (weight, bias) views (no copies)."""
    flat = np.asarray(flat)
    want = param_count(spec)
    if flat.shape != (want,):
        raise ValueError(f"parameter vector has shape {flat.shape}, expected ({want},)")
    views = []
    off = 0
    sizes = spec.layer_sizes
    for fi, fo in zip(sizes[:-1], sizes[1:]):
        w = flat[off : off + fi * fo].reshape(fi, fo)
        off += fi * fo
        b = flat[off : off + fo]
        off += fo
        views.append((w, b))
    return views


def kaiming_init(spec, rng):
    """He-normal weights (std sqrt(2/fan_in)) and zero biases."""
    params = np.zeros(param_count(spec))
    for w, _ in param_views(spec, params):
        fan_in = w.shape[0]
        w[:] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=w.shape)
    return params


def params_to_bytes(params):
    return np.ascontiguousarray(params, dtype="<f8").tobytes()


def params_from_bytes(buf, count):
    if len(buf) != 8 * count:
        raise ValueError(f"parameter blob is {len(buf)} bytes, expected {8 * count}")
    return np.frombuffer(buf, dtype="<f8").astype(np.float64)


@dataclass
class DropoutMasks:
    """Inverted-dropout masks, one per dropped layer input.

    layers[0] masks the network input, layers[1:] mask the hidden
    activations. Entries are 0 or 1/(1-p), so the expected activation is
    unchanged and evaluation needs no rescaling.
    """

    layers: list


def dropout_masks(spec, rng, batch):
    sizes = spec.layer_sizes
    rates = [spec.input_dropout] + [spec.hidden_dropout] * (len(sizes) - 2)
    masks = []
    for width, p in zip(sizes[:-1], rates):
        keep = rng.random(size=(batch, width)) >= p
        masks.append(keep / (1.0 - p))
    return DropoutMasks(masks)


@dataclass
class ForwardCache:
    inputs: list  # post-dropout input fed to each layer
    relu_masks: list  # z > 0 per hidden layer
    hidden_drop: list  # dropout mask per hidden layer, or None


def forward(spec, params, x, masks=None):
    """Run the network; returns (logits, cache for backward).

    With masks given the pass is a training pass: the input and each hidden
    activation is multiplied by its mask. Without masks (evaluation) the
    inverted scaling makes the forward pass the expectation of the masked one.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.layer_sizes[0]:
        raise ValueError(
            f"input has shape {x.shape}, expected (batch, {spec.layer_sizes[0]})"
        )
    views = param_views(spec, params)
    n_hidden = len(views) - 1
    a = x if masks is None else x * masks.layers[0]
    inputs, relu_masks, hidden_drop = [], [], []
    for l, (w, b) in enumerate(views):
        inputs.append(a)
        z = a @ w + b
        if l == n_hidden:  # output layer stays linear
            return z, ForwardCache(inputs, relu_masks, hidden_drop)
        pos = z > 0
        a = np.where(pos, z, 0.0)
        relu_masks.append(pos)
        if masks is None:
            hidden_drop.append(None)
        else:
            m = masks.layers[l + 1]
            a = a * m
            hidden_drop.append(m)
    raise AssertionError("unreachable")


def softmax_ce(logits, labels):
    """Mean cross-entropy of row-wise softmax, and its gradient in the logits.

    The gradient (softmax - onehot)/batch is exact, so backward propagates
    the true mean-loss gradient.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must be in [0, {c}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)  # stable under large logits
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    logp = shifted - np.log(total)
    loss = -logp[np.arange(n), labels].mean()
    dlogits = exp / total
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits


def backward(spec, params, cache, dlogits):
    """Exact reverse-mode gradient of softmax_ce(forward(...)) in flat layout."""
    views = param_views(spec, params)
    grad = np.zeros_like(np.asarray(params, dtype=np.float64))
    gviews = param_views(spec, grad)
    delta = np.asarray(dlogits, dtype=np.float64)
    for l in range(len(views) - 1, -1, -1):
        gw, gb = gviews[l]
        gw[:] = cache.inputs[l].T @ delta
        gb[:] = delta.sum(axis=0)
        if l > 0:
            w, _ = views[l]
            delta = delta @ w.T
            delta = delta * cache.relu_masks[l - 1]
            if cache.hidden_drop[l - 1] is not None:
                delta = delta * cache.hidden_drop[l - 1]
    return grad


def finite_diff_grad(spec, params, x, labels, eps=1e-6):
    """Central-difference gradient of the evaluation loss (dropout off)."""
    params = np.asarray(params, dtype=np.float64)

    def loss_at(p):
        logits, _ = forward(spec, p, x)
        loss, _ = softmax_ce(logits, labels)
        return loss

    grad = np.zeros_like(params)
    for i in range(params.size):
        up = params.copy()
        dn = params.copy()
        up[i] += eps
        dn[i] -= eps
        grad[i] = (loss_at(up) - loss_at(dn)) / (2.0 * eps)
    return grad


def nag_update(params, velocity, gradient, eta, mu):
    """One Nesterov-momentum step; returns (new_params, new_velocity).

    The velocity update is applied first, then the parameter update reuses
    both the raw gradient and the fresh velocity:
        v' = mu*v - eta*g
        p' = p - eta*g + mu*v'
    """
    v2 = mu * velocity - eta * gradient
    p2 = params - eta * gradient + mu * v2
    return p2, v2
