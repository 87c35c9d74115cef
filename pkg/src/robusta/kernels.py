"""Transition kernels Q(.|x): samplers over the unit hypercube and kernel families."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import seeding
from .errors import ConditioningInfeasibleError, ConfigError, EmptyNeighborhoodError
from .estimates import Estimate, binomial, mean_of
from .model_core import LabeledDataset, as_batch, clip_unit

METRICS = ("l2", "linf")


class PerturbationKernel:
    """Base class. Subclasses implement ``_draw(x, n, gen)`` and ``descriptor()``.

    ``sample`` is deterministic in ``(x, n, seed, index)``; ``index`` keys the
    stream per point so batches can be processed in any order.
    """

    def sample(self, x, n, seed=0, index=0):
        if n < 1:
            raise ValueError("n must be >= 1")
        x = np.asarray(x, dtype=np.float64)
        return self._draw(x, int(n), seeding.rng(seed, seeding.SAMPLE, index))

    def _draw(self, x, n, gen):
        raise NotImplementedError

    def sample_rows(self, X, seed=0):
        """One draw per row of ``X``; row i uses the stream of point index i."""
        X, _ = as_batch(X)
        return np.concatenate([self.sample(x, 1, seed, index=i) for i, x in enumerate(X)])

    def descriptor(self):
        raise NotImplementedError


def sample(kernel, x, n, seed=0, index=0):
    return kernel.sample(x, n, seed, index)


@dataclass(frozen=True)
class DegenerateKernel(PerturbationKernel):
    """Point mass at x (the epsilon -> 0 limit of every ball kernel)."""

    def _draw(self, x, n, gen):
        return np.repeat(x[None, :], n, axis=0)

    def sample_rows(self, X, seed=0):
        return as_batch(X)[0].copy()

    def descriptor(self):
        return {"kind": "degenerate"}


@dataclass(frozen=True)
class UniformBallKernel(PerturbationKernel):
    """Uniform distribution on the open epsilon-ball around x, clipped to [0,1]^m."""

    epsilon: float
    metric: str = "l2"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")

    def _steps(self, n, m, gen):
        if self.metric == "linf":
            return gen.uniform(-self.epsilon, self.epsilon, size=(n, m))
        d = gen.standard_normal((n, m))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = self.epsilon * gen.random(n) ** (1.0 / m)
        return d * r[:, None]

    def _draw(self, x, n, gen):
        return clip_unit(x[None, :] + self._steps(n, x.shape[0], gen))

    def sample_rows(self, X, seed=0):
        # vectorized: a single stream for the whole batch
        X, _ = as_batch(X)
        gen = seeding.rng(seed, seeding.SAMPLE, 1 << 40)
        return clip_unit(X + self._steps(len(X), X.shape[1], gen))

    def descriptor(self):
        return {"kind": "uniform_ball", "metric": self.metric, "epsilon": self.epsilon}


def uniform_ball_kernel(epsilon, metric="l2"):
    return UniformBallKernel(epsilon, metric)


class Labeler:
    """A total labeling function on the hypercube (ground truth Y(x))."""

    def __init__(self, fn: Callable, name="labeler"):
        self.fn = fn
        self.name = name

    def predict(self, X):
        X, single = as_batch(X)
        lab = np.asarray(self.fn(X), dtype=np.int64)
        return int(lab[0]) if single else lab

    __call__ = predict

    @classmethod
    def constant(cls, label=0):
        return cls(lambda X: np.full(len(X), label), name=f"constant({label})")


@dataclass(frozen=True)
class LabelAwareKernel(PerturbationKernel):
    """Base kernel conditioned on keeping the true label, by rejection sampling.

    At most ``max_tries`` base draws are spent per requested sample.
    """

    base: PerturbationKernel
    labeler: object
    max_tries: int = 1000

    def __post_init__(self):
        if self.max_tries < 1:
            raise ValueError("max_tries must be >= 1")

    def _draw(self, x, n, gen):
        target = self.labeler.predict(x[None, :])[0]
        budget = n * self.max_tries
        kept, tried, accepted = [], 0, 0
        chunk = n
        while accepted < n:
            if tried >= budget:
                raise ConditioningInfeasibleError(
                    f"label-aware kernel accepted {accepted}/{n} samples in {tried} tries",
                    acceptance=accepted / tried if tried else 0.0)
            k = min(chunk, budget - tried)
            cand = self.base._draw(x, k, gen)
            tried += k
            ok = cand[self.labeler.predict(cand) == target]
            kept.append(ok)
            accepted += len(ok)
            # size the next round from the running acceptance rate
            rate = max(accepted / tried, 1.0 / budget)
            chunk = int(min(max((n - accepted) / rate * 1.2, 16), 1 << 20))
        return np.concatenate(kept)[:n]

    def acceptance(self, x, n_tries, seed=0):
        """Fraction of ``n_tries`` base draws that keep the label of x."""
        x = np.asarray(x, dtype=np.float64)
        cand = self.base.sample(x, n_tries, seed)
        ok = self.labeler.predict(cand) == self.labeler.predict(x[None, :])[0]
        return binomial(int(ok.sum()), n_tries)

    def descriptor(self):
        return {"kind": "label_aware", "base": self.base.descriptor(), "max_tries": self.max_tries,
                "labeler": getattr(self.labeler, "name", "labeler")}


def label_aware(kernel, labeler, max_tries=1000):
    return LabelAwareKernel(kernel, labeler, max_tries)


@dataclass(frozen=True, eq=False)
class OnManifoldKernel(PerturbationKernel):
    """Empirical P restricted to the closed epsilon-ball around x."""

    epsilon: float
    dataset: LabeledDataset
    metric: str = "l2"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if len(self.dataset) == 0:
            raise ValueError("on-manifold kernel needs a nonempty dataset")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")

    def _draw(self, x, n, gen):
        diff = self.dataset.X - x[None, :]
        ord_ = 2 if self.metric == "l2" else np.inf
        dist = np.linalg.norm(diff, ord=ord_, axis=1)
        idx = np.flatnonzero(dist <= self.epsilon)
        if len(idx) == 0:
            raise EmptyNeighborhoodError(f"no dataset point within {self.epsilon} of x")
        w = self.dataset.probabilities()[idx]
        if w.sum() == 0:
            raise EmptyNeighborhoodError("all dataset points near x have zero weight")
        pick = gen.choice(idx, size=n, p=w / w.sum())
        return self.dataset.X[pick].copy()

    def descriptor(self):
        return {"kind": "on_manifold", "metric": self.metric, "epsilon": self.epsilon}


def on_manifold_kernel(epsilon, dataset, metric="l2"):
    return OnManifoldKernel(epsilon, dataset, metric)


# --------------------------------------------------------------------------
# families


@dataclass(frozen=True)
class KernelFamily:
    """Kernels Q_lambda, lambda in a 1-D box, with a density over lambda."""

    low: float
    high: float
    kernel_at: Callable = field(repr=False)
    density: Callable = field(repr=False)
    name: str = "family"

    @property
    def param_domain(self):
        return (self.low, self.high)


def family_uniform_epsilon(d=None, *, m=None, metric="l2"):
    """Uniform-ball kernels with epsilon uniform on [0, d]; d defaults to sqrt(m)."""
    if d is None:
        if m is None:
            raise ValueError("give d or the dimension m")
        d = math.sqrt(m)
    if not d > 0:
        raise ValueError("d must be > 0")

    def kernel_at(eps):
        if eps < 0 or eps > d * (1 + 1e-12):
            raise ValueError(f"epsilon {eps} outside [0, {d}]")
        return DegenerateKernel() if eps == 0 else UniformBallKernel(eps, metric)

    def density(eps):
        eps = np.asarray(eps, dtype=np.float64)
        return np.where((eps >= 0) & (eps <= d), 1.0 / d, 0.0)

    return KernelFamily(0.0, float(d), kernel_at, density, name=f"uniform_epsilon[{metric}]")


# --------------------------------------------------------------------------
# label preservation


def label_preserving_epsilon(kernel, dataset, labeler, n_outer, n_inner, seed=0):
    """Estimate the smallest epsilon for which ``kernel`` is (P, epsilon)-label preserving.

    Points are drawn from the dataset's (weighted) empirical distribution. The
    standard error is taken over outer draws, which is the binomial one when
    ``n_inner == 1``.
    """
    if n_outer < 1 or n_inner < 1:
        raise ValueError("counts must be >= 1")
    gen = seeding.rng(seed, seeding.OUTER)
    pick = gen.choice(len(dataset), size=n_outer, p=dataset.probabilities())
    X = dataset.X[pick]
    y0 = labeler.predict(X)
    if n_inner == 1:
        Xp = kernel.sample_rows(X, seed)
        agree = (labeler.predict(Xp) == y0).astype(float)
    else:
        agree = np.empty(n_outer)
        for i in range(n_outer):
            s = kernel.sample(X[i], n_inner, seed, index=i)
            agree[i] = np.mean(labeler.predict(s) == y0[i])
    est = mean_of(agree)
    return Estimate(1.0 - est.value, est.stderr, n_outer * n_inner)


# --------------------------------------------------------------------------
# descriptors


_DESCRIPTOR_KEYS = {
    "uniform_ball": ({"epsilon"}, {"metric"}),
    "degenerate": (set(), set()),
    "label_aware": ({"base"}, {"max_tries", "labeler"}),
    "on_manifold": ({"epsilon"}, {"metric"}),
}


def check_descriptor(desc):
    """Raise ConfigError unless ``desc`` names a known kernel with exactly the right keys."""
    if not isinstance(desc, dict):
        raise ConfigError("kernel descriptor must be an object")
    kind = desc.get("kind")
    if kind not in _DESCRIPTOR_KEYS:
        raise ConfigError(f"unknown kernel kind {kind!r}")
    need, extra = _DESCRIPTOR_KEYS[kind]
    keys = set(desc) - {"kind"}
    if need - keys:
        raise ConfigError(f"{kind} kernel is missing {sorted(need - keys)}")
    if keys - need - extra:
        raise ConfigError(f"{kind} kernel has unknown keys {sorted(keys - need - extra)}")
    if kind == "label_aware":
        check_descriptor(desc["base"])


def kernel_from_descriptor(desc, *, dataset=None, labeler=None):
    check_descriptor(desc)
    kind = desc["kind"]
    if kind == "uniform_ball":
        return UniformBallKernel(float(desc["epsilon"]), desc.get("metric", "l2"))
    if kind == "degenerate":
        return DegenerateKernel()
    if kind == "label_aware":
        if labeler is None:
            raise ConfigError("label_aware kernel needs a labeler")
        return LabelAwareKernel(kernel_from_descriptor(desc["base"], dataset=dataset, labeler=labeler),
                                labeler, int(desc.get("max_tries", 1000)))
    if kind == "on_manifold":
        if dataset is None:
            raise ConfigError("on_manifold kernel needs a dataset")
        return OnManifoldKernel(float(desc["epsilon"]), dataset, desc.get("metric", "l2"))
    raise ConfigError(f"unknown kernel kind {kind!r}")
