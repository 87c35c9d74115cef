"""Dense softmax networks, analytic classifiers, losses and optimizers.

Everything is float64 and batched: functions accept a single point (1-D array)
or a batch (2-D array, one point per row).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import seeding
from .errors import DatasetError, DegenerateClassifierError, DivergenceError, InputShapeError, NumericError

FORMAT_VERSION = 1
HIDDEN_ACTIVATIONS = ("relu", "leaky_relu", "identity")
OUTPUT_ACTIVATIONS = ("softmax", "sigmoid", "identity")
PROB_FLOOR = 1e-12


# --------------------------------------------------------------------------
# points and datasets


def as_batch(X, m=None):
    """Coerce to a 2-D float64 array; returns ``(batch, was_single_point)``."""
    arr = np.asarray(X, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise InputShapeError(f"expected a point or a batch of points, got shape {arr.shape}")
    if m is not None and arr.shape[1] != m:
        raise InputShapeError(f"expected points of dimension {m}, got {arr.shape[1]}")
    return arr, single


def as_point(x, m=None):
    """Validate a point of the unit hypercube."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise InputShapeError(f"a point must be 1-D, got shape {arr.shape}")
    if m is not None and arr.shape[0] != m:
        raise InputShapeError(f"expected a point of dimension {m}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise DatasetError("point has non-finite coordinates")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DatasetError("point lies outside the unit hypercube")
    return arr


def clip_unit(X):
    return np.clip(X, 0.0, 1.0)


def diameter(m):
    """Diameter of the m-dimensional unit hypercube."""
    return math.sqrt(m)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int | None = None
    weights: np.ndarray | None = None
    ids: np.ndarray | None = None

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, copy=True)
        if X.ndim != 2:
            raise InputShapeError(f"dataset points must form a 2-D array, got shape {X.shape}")
        y = np.array(self.y, copy=True)
        if y.ndim != 1 or len(y) != len(X):
            raise InputShapeError("labels must be a vector with one entry per point")
        if len(y) and not np.all(np.equal(np.mod(y, 1), 0)):
            raise DatasetError("labels must be integers")
        y = y.astype(np.int64)
        if not np.all(np.isfinite(X)):
            raise DatasetError("dataset contains non-finite coordinates")
        if np.any(X < 0.0) or np.any(X > 1.0):
            raise DatasetError("dataset points must lie in the unit hypercube")
        if np.any(y < 0):
            raise DatasetError("labels must be non-negative")
        k = self.n_classes
        if k is None:
            k = int(y.max()) + 1 if len(y) else 1
        if len(y) and y.max() >= k:
            raise DatasetError(f"label {int(y.max())} out of range for {k} classes")
        w = self.weights
        if w is not None:
            w = np.array(w, dtype=np.float64, copy=True)
            if w.shape != (len(X),):
                raise InputShapeError("weights must have one entry per point")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise DatasetError("weights must be finite and non-negative")
            if abs(w.sum() - 1.0) > 1e-9:
                raise DatasetError(f"weights must sum to 1, got {w.sum()!r}")
        ids = self.ids
        ids = np.arange(len(X)) if ids is None else np.asarray(ids, dtype=np.int64)
        for arr in (X, y, w, ids):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "n_classes", int(k))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return len(self.X)

    @property
    def m(self):
        return self.X.shape[1]

    @property
    def diameter(self):
        return diameter(self.m)

    def probabilities(self):
        if self.weights is not None:
            return self.weights
        return np.full(len(self), 1.0 / len(self))

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        w = None
        if self.weights is not None:
            w = self.weights[idx]
            w = w / w.sum()
        return LabeledDataset(self.X[idx], self.y[idx], self.n_classes, w, self.ids[idx])


# --------------------------------------------------------------------------
# elementwise maps


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def cross_entropy(p, q):
    """CE(p, q) = -sum_k p_k log max(q_k, 1e-12), row-wise."""
    return -np.sum(p * np.log(np.maximum(q, PROB_FLOOR)), axis=-1)


def _hidden(z, tag, slope):
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "leaky_relu":
        return np.where(z > 0, z, slope * z)
    return z


def _hidden_grad(z, g, tag, slope):
    # subgradient at exactly 0 is the left slope (0 for relu)
    if tag == "relu":
        return g * (z > 0)
    if tag == "leaky_relu":
        return g * np.where(z > 0, 1.0, slope)
    return g


# --------------------------------------------------------------------------
# dense network


@dataclass(frozen=True, eq=False)
class DifferentiableModel:
    """Fully connected network; the last activation tag is the output map.

    ``weights[l]`` has shape ``(fan_in, fan_out)``.
    """

    weights: tuple
    biases: tuple
    activations: tuple
    leaky_slope: float = 0.1

    def __post_init__(self):
        ws = tuple(np.array(w, dtype=np.float64, copy=True) for w in self.weights)
        bs = tuple(np.array(b, dtype=np.float64, copy=True) for b in self.biases)
        acts = tuple(self.activations)
        if not ws or len(ws) != len(bs) or len(acts) != len(ws):
            raise InputShapeError("need one weight matrix, bias and activation per layer")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise InputShapeError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and ws[i - 1].shape[1] != w.shape[0]:
                raise InputShapeError(f"layer {i}: fan-in {w.shape[0]} != previous fan-out {ws[i - 1].shape[1]}")
        for tag in acts[:-1]:
            if tag not in HIDDEN_ACTIVATIONS:
                raise ValueError(f"unknown hidden activation {tag!r}")
        if acts[-1] not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {acts[-1]!r}")
        for a in ws + bs:
            a.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)
        object.__setattr__(self, "activations", acts)

    @classmethod
    def init(cls, layer_sizes, *, hidden="relu", output="softmax", seed=0, leaky_slope=0.1):
        """He-normal weights (Glorot scale for linear layers), zero biases."""
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise InputShapeError("layer_sizes needs at least an input and an output size")
        gen = seeding.rng(seed, seeding.INIT)
        acts = [hidden] * (len(sizes) - 2) + [output]
        ws, bs = [], []
        for fan_in, fan_out, tag in zip(sizes[:-1], sizes[1:], acts):
            scale = math.sqrt((2.0 if tag in ("relu", "leaky_relu") else 1.0) / fan_in)
            ws.append(gen.standard_normal((fan_in, fan_out)) * scale)
            bs.append(np.zeros(fan_out))
        return cls(tuple(ws), tuple(bs), tuple(acts), leaky_slope)

    @property
    def layer_sizes(self):
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def n_inputs(self):
        return self.weights[0].shape[0]

    @property
    def n_outputs(self):
        return self.weights[-1].shape[1]

    n_classes = n_outputs

    @property
    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return tuple(out)

    @property
    def n_params(self):
        return sum(p.size for p in self.params)

    def with_params(self, params):
        params = tuple(params)
        if len(params) != 2 * len(self.weights):
            raise InputShapeError("parameter tuple has the wrong length")
        for new, old in zip(params, self.params):
            if np.shape(new) != old.shape:
                raise InputShapeError(f"parameter shape {np.shape(new)} != {old.shape}")
        return DifferentiableModel(params[0::2], params[1::2], self.activations, self.leaky_slope)

    def flat_params(self):
        return np.concatenate([p.ravel() for p in self.params])

    def with_flat_params(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        out, i = [], 0
        for p in self.params:
            out.append(flat[i:i + p.size].reshape(p.shape))
            i += p.size
        return self.with_params(out)

    # -- evaluation

    def _run(self, X):
        inputs, pre = [], []
        a = X
        last = len(self.weights) - 1
        for i, (w, b, tag) in enumerate(zip(self.weights, self.biases, self.activations)):
            inputs.append(a)
            z = a @ w + b
            pre.append(z)
            if i < last:
                a = _hidden(z, tag, self.leaky_slope)
            elif tag == "softmax":
                a = softmax(z)
            elif tag == "sigmoid":
                a = sigmoid(z)
            else:
                a = z
        return inputs, pre, a

    def _batch(self, X):
        return as_batch(X, self.n_inputs)

    def logits(self, X):
        X, single = self._batch(X)
        z = self._run(X)[1][-1]
        return z[0] if single else z

    def forward(self, X):
        X, single = self._batch(X)
        out = self._run(X)[2]
        return out[0] if single else out

    __call__ = forward

    def predict(self, X):
        X, single = self._batch(X)
        lab = np.argmax(self._run(X)[1][-1], axis=1)
        return int(lab[0]) if single else lab

    def backward(self, cache, grad_out=None, grad_pre=None):
        """Reverse pass.

        ``grad_out`` is dL/d(output), ``grad_pre`` is dL/d(last pre-activation);
        exactly one must be given. Returns ``(param_grads, grad_input)``.
        """
        inputs, pre, out = cache
        if (grad_out is None) == (grad_pre is None):
            raise ValueError("pass exactly one of grad_out, grad_pre")
        if grad_pre is None:
            tag = self.activations[-1]
            if tag == "softmax":
                g = out * (grad_out - np.sum(out * grad_out, axis=1, keepdims=True))
            elif tag == "sigmoid":
                g = grad_out * out * (1.0 - out)
            else:
                g = grad_out
        else:
            g = grad_pre
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                g = _hidden_grad(pre[i - 1], g, self.activations[i - 1], self.leaky_slope)
        return tuple(grads), g

    def forward_cache(self, X):
        X, _ = self._batch(X)
        return self._run(X)

    def vjp(self, X, grad_out):
        """Forward then backward with an output cotangent; returns (out, grads, grad_X)."""
        cache = self.forward_cache(X)
        grads, gx = self.backward(cache, grad_out=grad_out)
        return cache[2], grads, gx

    # -- cross-entropy

    def _ce_grad_pre(self, p, y):
        n = len(p)
        g = p.copy()
        g[np.arange(n), y] -= 1.0
        # log(max(p_y, floor)) is flat below the floor
        g[p[np.arange(n), y] < PROB_FLOOR] = 0.0
        return g

    def loss_grad_input(self, x, y):
        """Gradient of -log f(x)[y] with respect to the input."""
        if self.activations[-1] != "softmax":
            raise ValueError("cross-entropy gradients need a softmax output")
        X, single = self._batch(x)
        y = np.broadcast_to(np.asarray(y, dtype=np.int64), (len(X),))
        cache = self._run(X)
        _, gx = self.backward(cache, grad_pre=self._ce_grad_pre(cache[2], y))
        return gx[0] if single else gx

    def loss_grad_params(self, X, y):
        """Mean cross-entropy over the batch and its parameter gradients."""
        if self.activations[-1] != "softmax":
            raise ValueError("cross-entropy gradients need a softmax output")
        X, _ = self._batch(X)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        if len(X) == 0:
            raise ValueError("loss_grad_params needs a nonempty batch")
        if len(y) != len(X):
            raise InputShapeError("one label per point required")
        cache = self._run(X)
        p = cache[2]
        loss = float(np.mean(-np.log(np.maximum(p[np.arange(len(X)), y], PROB_FLOOR))))
        grads, _ = self.backward(cache, grad_pre=self._ce_grad_pre(p, y) / len(X))
        return grads, loss

    # -- serialization

    def to_dict(self):
        return {
            "version": FORMAT_VERSION,
            "layer_sizes": list(self.layer_sizes),
            "activations": list(self.activations),
            "leaky_slope": self.leaky_slope,
            # row-major, shape (fan_in, fan_out)
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {doc.get('version')!r}")
        sizes = doc["layer_sizes"]
        ws = [np.asarray(w, dtype=np.float64).reshape(a, b) for w, a, b in zip(doc["weights"], sizes[:-1], sizes[1:])]
        return cls(tuple(ws), tuple(np.asarray(b, dtype=np.float64) for b in doc["biases"]),
                   tuple(doc["activations"]), doc.get("leaky_slope", 0.1))

    def to_json(self):
        # float repr is the shortest string that round-trips exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


# --------------------------------------------------------------------------
# analytic classifiers


@dataclass(frozen=True, eq=False)
class LinearClassifier:
    """Affine logits ``W x + b`` with W of shape (K, m)."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        W = np.array(self.W, dtype=np.float64, copy=True)
        b = np.array(self.b, dtype=np.float64, copy=True)
        if W.ndim != 2 or b.shape != (W.shape[0],) or W.shape[0] < 2:
            raise InputShapeError("need W of shape (K, m) with K >= 2 and b of shape (K,)")
        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_hyperplane(cls, w, c):
        """Two classes; class 0 wherever ``w . x + c > 0``."""
        w = np.asarray(w, dtype=np.float64)
        return cls(np.stack([w, -w]), np.array([c, -c], dtype=np.float64))

    @property
    def n_inputs(self):
        return self.W.shape[1]

    @property
    def n_classes(self):
        return self.W.shape[0]

    def logits(self, X):
        X, single = as_batch(X, self.n_inputs)
        z = X @ self.W.T + self.b
        return z[0] if single else z

    def forward(self, X):
        return softmax(self.logits(X))

    def predict(self, X):
        z = self.logits(X)
        lab = np.argmax(z, axis=-1)
        return int(lab) if z.ndim == 1 else lab

    def as_model(self):
        return DifferentiableModel((self.W.T,), (self.b,), ("softmax",))

    def margin(self, X, metric="l2"):
        return linear_margin(self, X, metric)


@dataclass(frozen=True)
class ConstantClassifier:
    label: int
    n_classes: int | None = None

    def __post_init__(self):
        k = self.n_classes if self.n_classes is not None else self.label + 1
        if self.label < 0 or self.label >= k:
            raise ValueError("label out of range")
        object.__setattr__(self, "n_classes", int(k))

    def forward(self, X):
        X, single = as_batch(X)
        out = np.zeros((len(X), self.n_classes))
        out[:, self.label] = 1.0
        return out[0] if single else out

    def predict(self, X):
        X, single = as_batch(X)
        lab = np.full(len(X), self.label, dtype=np.int64)
        return int(lab[0]) if single else lab

    def as_model(self, m):
        """Zero-weight network with the same decisions (and zero input gradients)."""
        b = np.zeros(self.n_classes if self.n_classes > 1 else 2)
        b[self.label] = 1.0
        return DifferentiableModel((np.zeros((m, len(b))),), (b,), ("softmax",))


def linear_margin(lin, X, metric="l2"):
    """Exact distance from each point to the decision region boundary of a linear classifier.

    The region of the predicted class i is an intersection of half-spaces, so the
    distance to its complement is the minimum over j != i of the distance to the
    (i, j) hyperplane.  ``metric='linf'`` measures with the l-infinity norm
    (dual norm l1 in the denominator).
    """
    X, single = as_batch(X, lin.n_inputs)
    z = X @ lin.W.T + lin.b
    pred = np.argmax(z, axis=1)
    dual = {"l2": 2, "linf": 1}.get(metric)
    if dual is None:
        raise ValueError(f"unknown metric {metric!r}")
    out = np.full(len(X), np.inf)
    K = lin.n_classes
    for i in range(K):
        rows = pred == i
        if not rows.any():
            continue
        for j in range(K):
            if j == i:
                continue
            dw = lin.W[i] - lin.W[j]
            db = lin.b[i] - lin.b[j]
            nrm = np.linalg.norm(dw, ord=dual)
            if nrm == 0.0:
                if db == 0.0:
                    raise DegenerateClassifierError(f"classes {i} and {j} have identical parameters")
                continue
            dist = np.abs(X[rows] @ dw + db) / nrm
            out[rows] = np.minimum(out[rows], dist)
    return float(out[0]) if single else out


def accuracy(f, X, y):
    return float(np.mean(f.predict(as_batch(X)[0]) == np.asarray(y)))


# --------------------------------------------------------------------------
# optimizers


def _check_finite(grads):
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")


def sgd_step(model, grads, learning_rate):
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    _check_finite(grads)
    return model.with_params([p - learning_rate * g for p, g in zip(model.params, grads)])


@dataclass(frozen=True)
class AdamHyper:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True, eq=False)
class AdamState:
    m: tuple
    v: tuple
    t: int = 0

    @classmethod
    def zeros(cls, model):
        return cls(tuple(np.zeros_like(p) for p in model.params),
                   tuple(np.zeros_like(p) for p in model.params), 0)


def adam_step(model, grads, state, hyper=AdamHyper()):
    if hyper.learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    _check_finite(grads)
    t = state.t + 1
    b1, b2 = hyper.beta1, hyper.beta2
    m = tuple(b1 * mi + (1 - b1) * g for mi, g in zip(state.m, grads))
    v = tuple(b2 * vi + (1 - b2) * g * g for vi, g in zip(state.v, grads))
    c1, c2 = 1 - b1 ** t, 1 - b2 ** t
    new = [p - hyper.learning_rate * (mi / c1) / (np.sqrt(vi / c2) + hyper.eps)
           for p, mi, vi in zip(model.params, m, v)]
    return model.with_params(new), AdamState(m, v, t)


@dataclass
class Optimizer:
    """Small stateful wrapper so training loops can swap SGD and Adam."""

    kind: str = "adam"
    learning_rate: float = 1e-3
    state: AdamState | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")

    def step(self, model, grads):
        if self.kind == "sgd":
            return sgd_step(model, grads, self.learning_rate)
        if self.state is None:
            self.state = AdamState.zeros(model)
        model, self.state = adam_step(model, grads, self.state, AdamHyper(self.learning_rate))
        return model


def minibatches(n, batch_size, seed, stream, epoch):
    """Index arrays of one shuffled epoch, deterministic in (seed, stream, epoch)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = seeding.rng(seed, stream, epoch).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def train(model, X, y, *, epochs, batch_size=32, optimizer="adam", learning_rate=1e-3, seed=0):
    """Plain cross-entropy training; returns ``(model, history)``.

    History rows are ``(epoch, batch, loss)``.
    """
    X, _ = as_batch(X, model.n_inputs)
    y = np.asarray(y, dtype=np.int64)
    opt = Optimizer(optimizer, learning_rate)
    history = []
    for epoch in range(epochs):
        for b, idx in enumerate(minibatches(len(X), batch_size, seed, seeding.SHUFFLE_F, epoch)):
            grads, loss = model.loss_grad_params(X[idx], y[idx])
            if not math.isfinite(loss):
                raise DivergenceError(f"loss diverged at epoch {epoch}, batch {b}", epoch, b)
            model = opt.step(model, grads)
            history.append((epoch, b, loss))
    return model, history
