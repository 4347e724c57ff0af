"""Dense ELU networks trained with minibatch Adam and early stopping.

Two architectures:

* ``plain``: representation layers, hypothesis layers, linear output.
* ``two_heads``: shared representation layers feeding two hypothesis heads;
  each sample's loss goes through the head matching its treatment.

The training loss is ``mean((y - s * f(x))**2) + l2 * sum(W**2)`` over all
weight matrices (biases are not penalized).  ``s`` is a per-sample scale that
defaults to one; passing ``s = W - e(X)`` turns the objective into the
residual-on-residual loss used by the R-learner.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ..seeding import derive_seed


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training loss became {loss} at epoch {epoch}")
        self.epoch = epoch


class Architecture(str, enum.Enum):
    PLAIN = "plain"
    TWO_HEADS = "two_heads"


@dataclass(frozen=True)
class MlpParams:
    representation_layers: tuple[int, ...] = (200, 200, 200)
    hypothesis_layers: tuple[int, ...] = (100, 100)
    step_size: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    minibatch_size: int = 100
    l2_penalty: float = 1e-4
    validation_fraction: float = 0.30
    patience: int = 10
    max_epochs: int = 300
    standardize_target: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "representation_layers", tuple(int(w) for w in self.representation_layers))
        object.__setattr__(self, "hypothesis_layers", tuple(int(w) for w in self.hypothesis_layers))
        if any(w < 1 for w in self.representation_layers + self.hypothesis_layers):
            raise ValueError("layer widths must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be >= 1")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be >= 0")


@dataclass
class MlpModel:
    """Weights as a flat list of ``(W, b)`` layers.

    ``rep`` holds the representation layers; ``heads`` holds one layer list
    per output head (one for ``plain``, two for ``two_heads``).  Predictions
    are ``y_shift + y_scale * net(x)``.
    """

    rep: list
    heads: list
    architecture: Architecture
    n_features: int
    y_shift: float = 0.0
    y_scale: float = 1.0
    y_range: tuple[float, float] = (0.0, 0.0)
    history: dict = field(default_factory=dict)
    flat: np.ndarray | None = field(default=None, repr=False)

    def layers(self):
        out = list(self.rep)
        for h in self.heads:
            out.extend(h)
        return out


def elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def elu_grad_from_output(z, a):
    # derivative of ELU: 1 for z > 0, exp(z) = a + 1 otherwise
    return np.where(z > 0, 1.0, a + 1.0)


def _layer_shapes(widths):
    return [((a, b), (b,)) for a, b in zip(widths[:-1], widths[1:])]


def init_mlp(n_features: int, params: MlpParams, architecture=Architecture.PLAIN, seed=None) -> MlpModel:
    """Scaled-uniform fan-in initialization, zero biases.

    All weights live in one flat buffer (``model.flat``); layers are views.
    """
    architecture = Architecture(architecture)
    rng = np.random.default_rng(derive_seed(params.seed if seed is None else seed, [0]))
    rep_widths = (n_features,) + params.representation_layers
    head_widths = (rep_widths[-1],) + params.hypothesis_layers + (1,)
    n_heads = 2 if architecture is Architecture.TWO_HEADS else 1
    blocks = [_layer_shapes(rep_widths)] + [_layer_shapes(head_widths) for _ in range(n_heads)]
    total = sum(int(np.prod(ws)) + int(np.prod(bs)) for blk in blocks for ws, bs in blk)
    flat = np.zeros(total)
    pos = 0
    views = []
    for blk in blocks:
        layers = []
        for ws, bs in blk:
            size = ws[0] * ws[1]
            W = flat[pos:pos + size].reshape(ws)
            limit = math.sqrt(3.0 / ws[0])
            W[...] = rng.uniform(-limit, limit, size=ws)
            pos += size
            b = flat[pos:pos + bs[0]]
            pos += bs[0]
            layers.append([W, b])
        views.append(layers)
    model = MlpModel(views[0], views[1:], architecture, n_features)
    model.flat = flat
    return model


def _forward(layers, x, last_linear):
    """Return activations list [x, a1, ...] and pre-activations."""
    acts = [x]
    pres = []
    for i, (W, b) in enumerate(layers):
        z = acts[-1] @ W + b
        pres.append(z)
        if last_linear and i == len(layers) - 1:
            acts.append(z)
        else:
            acts.append(elu(z))
    return acts, pres


def _backward(layers, acts, pres, grad_out, last_linear):
    """Backprop ``grad_out`` (d loss / d last activation); returns layer grads and d/dx."""
    grads = [None] * len(layers)
    g = grad_out
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        if not (last_linear and i == len(layers) - 1):
            g = g * elu_grad_from_output(pres[i], acts[i + 1])
        grads[i] = [acts[i].T @ g, g.sum(axis=0)]
        g = g @ W.T
    return grads, g


def _net_outputs(model: MlpModel, x, t=None, keep=False):
    """Raw (standardized-scale) outputs; with ``t`` each row uses head ``t[i]``."""
    rep_acts, rep_pres = _forward(model.rep, x, last_linear=False)
    h = rep_acts[-1]
    if model.architecture is Architecture.PLAIN:
        acts, pres = _forward(model.heads[0], h, last_linear=True)
        out = acts[-1][:, 0]
        cache = (rep_acts, rep_pres, [(None, acts, pres)])
        return (out, cache) if keep else out
    if t is None:
        raise ValueError("two-head network needs a head selector")
    out = np.empty(x.shape[0])
    head_cache = []
    for k in (0, 1):
        rows = np.flatnonzero(t == k)
        acts, pres = _forward(model.heads[k], h[rows], last_linear=True)
        out[rows] = acts[-1][:, 0]
        head_cache.append((rows, acts, pres))
    cache = (rep_acts, rep_pres, head_cache)
    return (out, cache) if keep else out


def loss_and_grads(model: MlpModel, x, y, s=None, t=None, l2=0.0):
    """Penalized loss on the standardized scale and its gradient per layer.

    Gradients come back in ``model.layers()`` order as ``[dW, db]`` pairs;
    :func:`flat_grad` packs them like ``model.flat``.
    """
    n = x.shape[0]
    s = np.ones(n) if s is None else s
    out, (rep_acts, rep_pres, head_cache) = _net_outputs(model, x, t, keep=True)
    resid = y - s * out
    loss = float(np.mean(resid ** 2))
    d_out = -2.0 * resid * s / n
    g_h = np.zeros_like(rep_acts[-1])
    head_grads = []
    for k, (rows, acts, pres) in enumerate(head_cache):
        sel = slice(None) if rows is None else rows
        grads, g_in = _backward(model.heads[k], acts, pres, d_out[sel][:, None], last_linear=True)
        g_h[sel] += g_in
        head_grads.extend(grads)
    rep_grads, _ = _backward(model.rep, rep_acts, rep_pres, g_h, last_linear=False)
    grads = rep_grads + head_grads
    if l2 > 0:
        for (W, _), g in zip(model.layers(), grads):
            loss += l2 * float(np.sum(W * W))
            g[0] = g[0] + 2.0 * l2 * W
    return loss, grads


def flat_grad(grads) -> np.ndarray:
    return np.concatenate([a.ravel() for pair in grads for a in pair])


def _objective(model, x, y, s, t):
    out = _net_outputs(model, x, t)
    s = np.ones(x.shape[0]) if s is None else s
    return float(np.mean((y - s * out) ** 2))


def _sub(a, rows):
    return None if a is None else a[rows]


def fit_mlp(X, y, params: MlpParams = MlpParams(), architecture=Architecture.PLAIN, *,
            treatment=None, scale=None) -> MlpModel:
    """Train a network by minibatch Adam with early stopping.

    Args:
        X: ``(n, d)`` inputs.
        y: targets.
        params: hyperparameters; ``params.seed`` fixes initialization, the
            validation split and minibatch order.
        architecture: ``"plain"`` or ``"two_heads"``.
        treatment: 0/1 head selector, required for ``two_heads``.
        scale: optional per-sample output scale ``s`` in ``(y - s f(x))**2``.

    Raises:
        DivergenceError: the training loss stopped being finite.
    """
    architecture = Architecture(architecture)
    x = np.asarray(getattr(X, "values", X) if not isinstance(X, np.ndarray) else X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = x.shape
    if y.shape != (n,):
        raise ValueError(f"y has shape {y.shape}, expected ({n},)")
    t = None
    if architecture is Architecture.TWO_HEADS:
        if treatment is None:
            raise ValueError("two-head training needs a treatment column")
        t = np.asarray(treatment).astype(np.int64)
    s = None if scale is None else np.asarray(scale, dtype=float)

    model = init_mlp(d, params, architecture)
    model.y_range = (float(y.min()), float(y.max()))
    if params.standardize_target:
        # a per-sample scale forbids shifting the target
        shift = float(y.mean()) if s is None else 0.0
        spread = float(np.sqrt(np.mean((y - shift) ** 2)))
        model.y_shift, model.y_scale = shift, (spread if spread > 0 else 1.0)
    y_std = (y - model.y_shift) / model.y_scale

    rng = np.random.default_rng(derive_seed(params.seed, [1]))
    perm = rng.permutation(n)
    n_val = int(round(params.validation_fraction * n))
    n_val = min(max(n_val, 1), n - 1) if n > 1 else 0
    val, tr = perm[:n_val], perm[n_val:]
    if n_val == 0:
        val = tr

    theta = model.flat
    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    b1, b2 = params.adam_betas
    step = 0
    best = math.inf
    best_theta = theta.copy()
    best_epoch = 0
    bad = 0
    val_curve = []
    epoch = 0
    for epoch in range(1, params.max_epochs + 1):
        order = tr[rng.permutation(tr.size)]
        for start in range(0, order.size, params.minibatch_size):
            rows = order[start:start + params.minibatch_size]
            loss, grads = loss_and_grads(model, x[rows], y_std[rows], _sub(s, rows), _sub(t, rows),
                                         params.l2_penalty)
            if not math.isfinite(loss):
                raise DivergenceError(epoch, loss)
            g = flat_grad(grads)
            step += 1
            m1 *= b1
            m1 += (1 - b1) * g
            m2 *= b2
            m2 += (1 - b2) * (g * g)
            lr = params.step_size * math.sqrt(1.0 - b2 ** step) / (1.0 - b1 ** step)
            theta -= lr * m1 / (np.sqrt(m2) + params.adam_eps * math.sqrt(1.0 - b2 ** step))
        v = _objective(model, x[val], y_std[val], _sub(s, val), _sub(t, val))
        if not math.isfinite(v):
            raise DivergenceError(epoch, v)
        val_curve.append(v)
        if v < best:
            best, best_epoch, bad = v, epoch, 0
            best_theta[...] = theta
        else:
            bad += 1
            if bad >= params.patience:
                break
    theta[...] = best_theta
    model.history = {"epochs": epoch, "best_epoch": best_epoch, "best_val_loss": best,
                     "val_loss": val_curve}
    return model


def predict_mlp(model: MlpModel, X_new, head: int | None = None) -> np.ndarray:
    x = np.asarray(getattr(X_new, "values", X_new) if not isinstance(X_new, np.ndarray) else X_new,
                   dtype=float)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got shape {x.shape}")
    if model.architecture is Architecture.TWO_HEADS:
        if head not in (0, 1):
            raise ValueError("two-head model needs head=0 or head=1")
        t = np.full(x.shape[0], head)
    else:
        if head is not None:
            raise ValueError("plain model has a single output; do not pass head")
        t = None
    return model.y_shift + model.y_scale * _net_outputs(model, x, t)
