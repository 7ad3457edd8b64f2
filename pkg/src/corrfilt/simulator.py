"""Ground-truth generation for the uncertain, attacked observation model.

Each replication draws from independent counter-based streams keyed by
``(base_seed, run_index, label)`` so runs can be generated in any order,
on any worker, and still be bit-for-bit reproducible.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Literal, Protocol

import numpy as np

from .errors import ModelValidationError, ShapeError
from .model import CovarianceFactorization, Model

Init = Literal["stationary", "paper-transient"]
Distribution = Literal["gaussian", "uniform"]

LABELS = ("signal", "v-noise", "gamma", "lambda", "w-noise")


class RngStream:
    """Per-replication family of independent Philox streams."""

    def __init__(self, base_seed: int, run_index: int = 0):
        self.base_seed = int(base_seed) & (2 ** 64 - 1)
        self.run_index = int(run_index)

    def generator(self, label: str) -> np.random.Generator:
        if label not in LABELS:
            raise KeyError(f"unknown substream {label!r}")
        seq = np.random.SeedSequence(self.base_seed,
                                     spawn_key=(self.run_index, LABELS.index(label)))
        return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class AR2Params:
    """``x_k = -b1 x_{k-1} - b2 x_{k-2} + eps_k`` with ``Var[eps_k] = sigma2``."""

    b1: float
    b2: float
    sigma2: float

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ModelValidationError("AR(2) innovation variance sigma2 must be positive")
        disc = self.b1 ** 2 - 4 * self.b2
        if disc <= 0:
            raise ModelValidationError("AR(2) roots must be real and distinct (b1^2 - 4 b2 > 0)")
        if max(abs(r) for r in self.roots) >= 1:
            raise ModelValidationError("AR(2) roots must lie inside the unit circle")

    @property
    def roots(self) -> tuple[float, float]:
        r = math.sqrt(self.b1 ** 2 - 4 * self.b2)
        return (-self.b1 + r) / 2, (-self.b1 - r) / 2

    def weights(self, q_form: str = "stationary") -> tuple[float, float]:
        """Weights ``(Q1, Q2)`` of ``Cov[x_k, x_s] = Q1 b1^(k-s) + Q2 b2^(k-s)``.

        ``"stationary"`` gives the autocovariance of the recursion itself,
        so ``Q1 + Q2`` is the stationary variance. ``"paper"`` is the
        published closed form, which equals the stationary weights times
        ``(1 - b1^2)(1 - b2^2)(1 - b1 b2) / (1 + b1 b2)`` (roots ``b1, b2``).
        """
        be1, be2 = self.roots
        s2 = self.sigma2
        if q_form == "stationary":
            den = (be1 - be2) * (1 - be1 * be2)
            return (s2 * be1 / (den * (1 - be1 ** 2)),
                    -s2 * be2 / (den * (1 - be2 ** 2)))
        if q_form == "paper":
            den = (be2 - be1) * (be1 * be2 + 1)
            return (s2 * be1 * (be2 ** 2 - 1) / den, -s2 * be2 * (be1 ** 2 - 1) / den)
        raise ValueError(f"unknown q_form {q_form!r}")

    def autocovariance(self, lag: int, q_form: str = "stationary") -> float:
        (q1, q2), (be1, be2) = self.weights(q_form), self.roots
        return q1 * be1 ** abs(lag) + q2 * be2 ** abs(lag)


def ar2_factorization(params: AR2Params, q_form: str = "stationary") -> CovarianceFactorization:
    """Rank-2 factorization ``A_k = [Q1 b1^k, Q2 b2^k]``, ``B_k = [b1^-k, b2^-k]``."""
    q = np.array(params.weights(q_form))
    beta = np.array(params.roots)
    return CovarianceFactorization(A=lambda k: (q * beta ** k)[None, :],
                                   B=lambda k: (beta ** (-float(k)))[None, :],
                                   n_x=1, p=2,
                                   kernel=lambda k, s: np.array(
                                       [[float(q @ beta ** abs(k - s))]]))


def _standard(gen: np.random.Generator, size, dist: Distribution) -> np.ndarray:
    if dist == "gaussian":
        return gen.standard_normal(size)
    if dist == "uniform":
        return gen.uniform(-math.sqrt(3.0), math.sqrt(3.0), size)
    raise ValueError(f"unknown distribution {dist!r}")


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric square root, tolerant of singular PSD input."""
    m = np.atleast_2d(m)
    if m.shape == (1, 1):
        return np.sqrt(np.maximum(m, 0.0))
    w, V = np.linalg.eigh(0.5 * (m + m.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


class SignalGenerator(Protocol):
    n_x: int

    def __call__(self, gen: np.random.Generator, steps: int,
                 dist: Distribution) -> np.ndarray: ...


@dataclass(frozen=True)
class AR2Signal:
    params: AR2Params
    init: Init = "stationary"
    n_x: int = 1

    def __call__(self, gen, steps, dist="gaussian"):
        b1, b2, s2 = self.params.b1, self.params.b2, self.params.sigma2
        if self.init == "stationary":
            g0, g1 = self.params.autocovariance(0), self.params.autocovariance(1)
            # (x_{-1}, x_0) from the stationary joint law; x_1 onward by recursion
            prev2, prev1 = psd_sqrt(np.array([[g0, g1], [g1, g0]])) @ _standard(gen, 2, dist)
        elif self.init == "paper-transient":
            # x_1 = eps_1, x_2 = -b1 x_1 + eps_2
            prev2 = prev1 = 0.0
        else:
            raise ValueError(f"unknown init scheme {self.init!r}")
        eps = math.sqrt(s2) * _standard(gen, steps, dist)
        x = np.empty(steps)
        for i in range(steps):
            x[i] = -b1 * prev1 - b2 * prev2 + eps[i]
            prev2, prev1 = prev1, x[i]
        return x[:, None]


@dataclass(frozen=True)
class GaussianSignal:
    """Exact joint draw from any factorized covariance (desk-scale horizons)."""

    cov: CovarianceFactorization

    @property
    def n_x(self) -> int:
        return self.cov.n_x

    def __call__(self, gen, steps, dist="gaussian"):
        n = self.cov.n_x
        gram = np.empty((steps * n, steps * n))
        for k in range(1, steps + 1):
            for s in range(1, k + 1):
                blk = self.cov.exact(k, s)
                gram[(k - 1) * n:k * n, (s - 1) * n:s * n] = blk
                gram[(s - 1) * n:s * n, (k - 1) * n:k * n] = blk.T
        return (psd_sqrt(gram) @ _standard(gen, steps * n, dist)).reshape(steps, n)


@dataclass(frozen=True)
class Trajectory:
    """One realization; rows are ``k = 1..K``."""

    x: np.ndarray
    v: np.ndarray
    z: np.ndarray
    y: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray
    w: np.ndarray

    @property
    def steps(self) -> int:
        return self.x.shape[0]

    def header(self) -> list[str]:
        def cols(name, n):
            return [name] if n == 1 else [f"{name}{i + 1}" for i in range(n)]
        n_x, n_z = self.x.shape[1], self.z.shape[1]
        return (["k"] + cols("x", n_x) + cols("v", n_z) + cols("z", n_z) + cols("y", n_z)
                + ["gamma", "lambda"])

    def rows(self):
        for i in range(self.steps):
            yield ([i + 1] + [repr(float(a)) for a in self.x[i]]
                   + [repr(float(a)) for a in self.v[i]] + [repr(float(a)) for a in self.z[i]]
                   + [repr(float(a)) for a in self.y[i]]
                   + [int(self.gamma[i]), int(self.lam[i])])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.header())
            writer.writerows(self.rows())


def read_observations(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Read ``y`` (and ``x`` when present) back from a trajectory CSV."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        names = reader.fieldnames or []
        rows = list(reader)
    y_cols = [c for c in names if c == "y" or (c.startswith("y") and c[1:].isdigit())]
    x_cols = [c for c in names if c == "x" or (c.startswith("x") and c[1:].isdigit())]
    if not y_cols:
        raise ShapeError(f"{path} has no observation column")
    y = np.array([[float(r[c]) for c in y_cols] for r in rows])
    x = np.array([[float(r[c]) for c in x_cols] for r in rows]) if x_cols else None
    return y, x


def simulate_run(model: Model, steps: int, rng: RngStream, signal: SignalGenerator,
                 dist: Distribution = "gaussian") -> Trajectory:
    """Draw ``x, v, gamma, lambda, w`` and assemble ``z`` and ``y``."""
    if steps < 1:
        raise ModelValidationError("horizon must be at least one step")
    if signal.n_x != model.cov.n_x:
        raise ShapeError("signal generator and covariance model disagree on n_x")
    n_z = model.obs.n_z
    x = np.asarray(signal(rng.generator("signal"), steps, dist), dtype=float).reshape(steps, -1)

    g_v = rng.generator("v-noise")
    v = np.empty((steps, n_z))
    v_prev = psd_sqrt(model.noise.Sigma_v0) @ _standard(g_v, n_z, dist)
    for i in range(steps):
        k = i + 1
        u = psd_sqrt(model.noise.Sigma_u(k - 1)) @ _standard(g_v, n_z, dist)
        v_prev = np.atleast_2d(model.noise.D(k - 1)) @ v_prev + u
        v[i] = v_prev

    ks = range(1, steps + 1)
    gb = np.array([model.schedule.gamma_bar(k) for k in ks], dtype=float)
    lb = np.array([model.schedule.lambda_bar(k) for k in ks], dtype=float)
    if np.any((gb < 0) | (gb > 1)) or np.any((lb < 0) | (lb > 1)):
        raise ModelValidationError("Bernoulli probabilities must lie in [0, 1]")
    gamma = (rng.generator("gamma").random(steps) < gb).astype(np.int8)
    lam = (rng.generator("lambda").random(steps) < lb).astype(np.int8)

    g_w = rng.generator("w-noise")
    w = np.array([psd_sqrt(model.attack.Sigma_w(k)) @ _standard(g_w, n_z, dist) for k in ks])

    hx = np.array([model.obs(k, x[k - 1]) for k in ks])
    z = gamma[:, None] * hx + v
    y = (1 - lam[:, None]) * z + lam[:, None] * w
    return Trajectory(x=x, v=v, z=z, y=y, gamma=gamma, lam=lam, w=w)
