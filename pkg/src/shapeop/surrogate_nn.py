"""ReLU network surrogates and their composition into operator networks.

A network is an alternating chain of affine maps and componentwise ReLU
activations with no activation after the final affine map; its size is the
number of exactly-nonzero weight and bias entries. Composed with a shape
encoder and a solution decoder (plus restriction/padding between the
infinite coefficient sequences and the finite network widths), it becomes an
operator network mapping deformation fields to reference-domain functions.

The trainer is deliberately small: full-batch gradient descent on the mean
squared coefficient error with a fixed step schedule, an 80/20 validation
split drawn from the seed, and the best validation iterate returned.
Everything is plain numpy, so repeated runs with one seed reproduce the
returned weights bit for bit.
"""

from __future__ import annotations

import json
from typing import Optional, Sequence

import numpy as np

from .errors import SurrogateError

__all__ = [
    "ReluNet",
    "OnetModel",
    "forward",
    "size",
    "identity_net",
    "train",
    "compose_onet",
    "onet_apply",
    "save_net",
    "load_net",
]


class ReluNet:
    """Weights and biases of A_L o ReLU o A_{L-1} o ... o ReLU o A_0."""

    def __init__(self, layers: Sequence[tuple[np.ndarray, np.ndarray]]):
        if not layers:
            raise SurrogateError("network needs at least one affine layer")
        self.layers = []
        prev_out = None
        for W, b in layers:
            W = np.asarray(W, dtype=float)
            b = np.asarray(b, dtype=float)
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise SurrogateError("layer shapes inconsistent")
            if prev_out is not None and W.shape[1] != prev_out:
                raise SurrogateError(
                    f"layer input width {W.shape[1]} != previous output {prev_out}")
            prev_out = W.shape[0]
            self.layers.append((W, b))
        self.report: Optional[dict] = None

    @property
    def input_width(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def output_width(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def widths(self) -> list[int]:
        return [self.input_width] + [W.shape[0] for W, _ in self.layers]

    def copy(self) -> "ReluNet":
        return ReluNet([(W.copy(), b.copy()) for W, b in self.layers])


def forward(net: ReluNet, x: np.ndarray) -> np.ndarray:
    """Network output; accepts a single vector or a batch of row vectors."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    z = x.reshape(1, -1) if single else x
    if z.shape[1] != net.input_width:
        raise SurrogateError(
            f"input width {z.shape[1]} != network width {net.input_width}")
    last = len(net.layers) - 1
    for i, (W, b) in enumerate(net.layers):
        z = z @ W.T + b
        if i < last:
            z = np.maximum(z, 0.0)
    return z[0] if single else z


def size(net: ReluNet) -> int:
    """Number of exactly nonzero entries over all weights and biases."""
    return int(sum(np.count_nonzero(W) + np.count_nonzero(b)
                   for W, b in net.layers))


def identity_net(d: int) -> ReluNet:
    """ReLU(x) - ReLU(-x) = x: the 4d-weight identity emulation."""
    eye = np.eye(d)
    W0 = np.vstack([eye, -eye])
    W1 = np.hstack([eye, -eye])
    return ReluNet([(W0, np.zeros(2 * d)), (W1, np.zeros(d))])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _init_layers(widths: Sequence[int], rng: np.random.Generator):
    layers = []
    for nin, nout in zip(widths[:-1], widths[1:]):
        W = rng.normal(0.0, np.sqrt(2.0 / nin), size=(nout, nin))
        layers.append((W, np.zeros(nout)))
    return layers


def _forward_cached(layers, X):
    acts = [X]
    z = X
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        z = z @ W.T + b
        if i < last:
            z = np.maximum(z, 0.0)
        acts.append(z)
    return acts


def _gradients(layers, acts, Y):
    n = Y.shape[0]
    grads = [None] * len(layers)
    delta = 2.0 * (acts[-1] - Y) / (n * Y.shape[1])
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
        if i > 0:
            delta = (delta @ W) * (acts[i] > 0.0)
    return grads


def _mse(pred, Y):
    d = pred - Y
    return float(np.mean(d * d))


def train(dataset: Sequence[tuple], arch: Sequence[int], seed: int,
          epochs: int = 5000, lr: float = 1e-2, lr_decay: float = 0.5,
          decay_every: int = 1000) -> ReluNet:
    """Full-batch gradient descent on the mean squared coefficient error.

    ``dataset`` is a list of (input vector, target coefficient vector);
    ``arch`` lists the hidden widths. A fixed 80/20 train/validation split is
    drawn from the seed and the best validation iterate is returned, with
    losses and size recorded in ``net.report``. Deterministic per seed.
    """
    if len(dataset) == 0:
        raise SurrogateError("training dataset is empty")
    X = np.array([np.asarray(x, dtype=float).ravel() for x, _ in dataset])
    Y = np.array([np.asarray(t, dtype=float).ravel() for _, t in dataset])
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(X))
    n_val = max(1, len(X) // 5) if len(X) > 1 else 0
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    if tr_idx.size == 0:
        tr_idx = perm
    Xt, Yt = X[tr_idx], Y[tr_idx]
    Xv, Yv = (X[val_idx], Y[val_idx]) if n_val else (Xt, Yt)

    widths = [X.shape[1], *map(int, arch), Y.shape[1]]
    layers = _init_layers(widths, rng)

    best_val = np.inf
    best_layers = [(W.copy(), b.copy()) for W, b in layers]
    step = lr
    # divergence is detected explicitly, so silence transient overflow
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(epochs):
            if epoch > 0 and decay_every > 0 and epoch % decay_every == 0:
                step *= lr_decay
            acts = _forward_cached(layers, Xt)
            loss = _mse(acts[-1], Yt)
            if not np.isfinite(loss):
                raise SurrogateError(
                    f"non-finite training loss at epoch {epoch} (step {step:g}); "
                    "reduce the learning rate")
            grads = _gradients(layers, acts, Yt)
            layers = [(W - step * gW, b - step * gb)
                      for (W, b), (gW, gb) in zip(layers, grads)]
            val = _mse(_forward_cached(layers, Xv)[-1], Yv)
            if val < best_val:
                best_val = val
                best_layers = [(W.copy(), b.copy()) for W, b in layers]

    net = ReluNet(best_layers)
    net.report = {
        "train_loss": _mse(_forward_cached(best_layers, Xt)[-1], Yt),
        "val_loss": float(best_val),
        "size": size(net),
        "epochs": int(epochs),
        "n_train": int(tr_idx.size),
        "n_val": int(n_val),
    }
    return net


# ---------------------------------------------------------------------------
# operator network composition
# ---------------------------------------------------------------------------

class OnetModel:
    """decoder o pad o net o restrict o encoder."""

    def __init__(self, encoder, net: ReluNet, decoder):
        self.encoder = encoder
        self.net = net
        self.decoder = decoder
        self.n0 = net.input_width
        self.pad_target = decoder.m
        if net.output_width > decoder.m:
            raise SurrogateError(
                f"network emits {net.output_width} coefficients, decoder "
                f"truncation is {decoder.m}")


def compose_onet(encoder, net: ReluNet, decoder) -> OnetModel:
    return OnetModel(encoder, net, decoder)


def onet_apply(model: OnetModel, target):
    """Apply the operator network to a deformation field or a raw ParamPoint.

    Returns the decoded function on the reference domain.
    """
    from .frames import pad, restrict

    coeffs = model.encoder(target)
    z = restrict(pad(np.asarray(coeffs, dtype=float), model.n0), model.n0)
    out = forward(model.net, z)
    return model.decoder(pad(out, model.pad_target))


# ---------------------------------------------------------------------------
# serialization (bit-exact through repr round-trips)
# ---------------------------------------------------------------------------

def save_net(net: ReluNet, path: str):
    doc = {
        "format": "shapeop-relu-net-v1",
        "widths": net.widths,
        "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in net.layers],
        "report": net.report,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_net(path: str) -> ReluNet:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "shapeop-relu-net-v1":
        raise SurrogateError(f"not a ReLU net file: {path}")
    net = ReluNet([(np.asarray(l["W"], dtype=float), np.asarray(l["b"], dtype=float))
                   for l in doc["layers"]])
    net.report = doc.get("report")
    return net
