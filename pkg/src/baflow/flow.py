"""Velocity fields with NFE accounting, analytic oracle fields, and backbone training.

Time runs from t=1 (noise) down to t=0 (data); every solver update subtracts
its integral estimate, and the analytic oracles adopt the same descending
convention so sign bugs cannot hide. A field's ``nfe`` counter advances by
one per state evaluated (a batched call with B rows counts B); it is the
latency unit all solvers are measured in.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from . import data_metrics
from .nnet import (
    MlpModel,
    adam_init,
    adam_step,
    grad_mse,
    load_checkpoint,
    mlp_init,
    save_checkpoint,
    sinusoidal_features,
)

BACKBONE_KIND = "backbone"


class VelocityField:
    """Evaluable vector field v(x, t) with a monotone evaluation tally.

    ``field(x, t)`` evaluates the velocity and increments ``nfe`` by the
    number of states in the call (1 for a single (d,) state, B for a (B, d)
    batch). Evaluation itself is pure; the counter is the only mutable piece,
    so give each sampling run its own field instance or reset between runs.
    """

    kind = "analytic"

    def __init__(self, dim: int):
        self.dim = int(dim)
        self.nfe = 0

    def __call__(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        self.nfe += 1 if x.ndim == 1 else x.shape[0]
        return self._evaluate(x, t)

    def reset_nfe(self) -> None:
        self.nfe = 0

    def _evaluate(self, x, t):
        raise NotImplementedError


class TimeOnlyField(VelocityField):
    """Analytic field v(x, t) = f(t) with a known antiderivative.

    ``antideriv_fn`` must satisfy F' = f; ``deriv_fn`` is f' (used by the
    scheme-error oracles). The same scalar profile is applied to every state
    dimension.
    """

    def __init__(self, v_fn: Callable, antideriv_fn: Callable, deriv_fn: Callable,
                 dim: int = 1, label: str = "time_only"):
        super().__init__(dim)
        self.v_fn = v_fn
        self.antideriv_fn = antideriv_fn
        self.deriv_fn = deriv_fn
        self.label = label

    def _evaluate(self, x, t):
        val = self.v_fn(np.asarray(t, dtype=np.float64))
        if x.ndim == 1:
            return np.full(x.shape, float(val))
        vals = np.broadcast_to(np.atleast_1d(val), (x.shape[0],))
        return np.repeat(vals[:, None], x.shape[1], axis=1)

    def exact_from_noise(self, x1, t_end):
        # x(t_end) = x1 - (F(1) - F(t_end)) for descending-time integration.
        x1 = np.asarray(x1, dtype=np.float64)
        t_end = np.asarray(t_end, dtype=np.float64)
        drop = self.antideriv_fn(1.0) - self.antideriv_fn(t_end)
        if t_end.ndim == 0:
            return x1 - float(drop)
        return x1[None, :] - np.asarray(drop)[:, None]


def time_poly_field(coeffs, dim: int = 1) -> TimeOnlyField:
    """v(t) = sum_k coeffs[k] * t^k."""
    c = np.asarray(coeffs, dtype=np.float64)
    if c.ndim != 1 or c.size < 1:
        raise ValueError("coeffs must be a non-empty 1-D sequence")
    anti = np.concatenate([[0.0], c / np.arange(1, c.size + 1)])
    deriv = c[1:] * np.arange(1, c.size) if c.size > 1 else np.zeros(1)
    return TimeOnlyField(
        v_fn=lambda t: np.polynomial.polynomial.polyval(t, c),
        antideriv_fn=lambda t: np.polynomial.polynomial.polyval(t, anti),
        deriv_fn=lambda t: np.polynomial.polynomial.polyval(t, deriv),
        dim=dim,
        label=f"poly{list(c)}",
    )


def time_cos_field(dim: int = 1) -> TimeOnlyField:
    """v(t) = cos(t)."""
    return TimeOnlyField(np.cos, np.sin, lambda t: -np.sin(t), dim=dim, label="cos")


def time_exp_field(dim: int = 1) -> TimeOnlyField:
    """v(t) = exp(t)."""
    return TimeOnlyField(np.exp, np.exp, np.exp, dim=dim, label="exp")


class LinearStateField(VelocityField):
    """Analytic field v(x, t) = a*x + b0 + b1*t with per-dimension scalars.

    The descending-time solution from x(1) = x1 follows from the integrating
    factor; ``a`` is the Lipschitz constant of the field in x, which is what
    the drift-error experiments vary.
    """

    def __init__(self, a, b0, b1=None, label: str = "linear_state"):
        a = np.atleast_1d(np.asarray(a, dtype=np.float64))
        b0 = np.atleast_1d(np.asarray(b0, dtype=np.float64))
        b1 = np.zeros_like(a) if b1 is None else np.atleast_1d(np.asarray(b1, dtype=np.float64))
        if not (a.shape == b0.shape == b1.shape):
            raise ValueError("a, b0, b1 must share one shape (d,)")
        super().__init__(a.size)
        self.a, self.b0, self.b1 = a, b0, b1
        self.label = label

    def _evaluate(self, x, t):
        t = np.asarray(t, dtype=np.float64)
        if x.ndim == 1:
            return self.a * x + self.b0 + self.b1 * float(t)
        t_col = np.broadcast_to(np.atleast_1d(t), (x.shape[0],))[:, None]
        return self.a[None, :] * x + self.b0[None, :] + self.b1[None, :] * t_col

    def velocity_at(self, x, t):
        """Closed-form velocity without touching the NFE counter (oracle use)."""
        return self._evaluate(np.asarray(x, dtype=np.float64), t)

    def exact_from_noise(self, x1, t_end):
        x1 = np.atleast_1d(np.asarray(x1, dtype=np.float64))
        t_end = np.asarray(t_end, dtype=np.float64)
        ts = np.atleast_1d(t_end)[:, None]  # (m, 1)
        a, b0, b1 = self.a[None, :], self.b0[None, :], self.b1[None, :]
        out = np.empty((ts.shape[0], self.dim))
        nz = self.a != 0.0
        if np.any(nz):
            beta = np.where(nz, -b1 / np.where(nz, a, 1.0), 0.0)
            alpha = np.where(nz, (beta - b0) / np.where(nz, a, 1.0), 0.0)
            xp = alpha + beta * ts
            xp1 = alpha + beta
            hom = (x1[None, :] - xp1) * np.exp(a * (ts - 1.0))
            out[:, :] = np.where(nz, hom + xp, 0.0)
        if np.any(~nz):
            flat = x1[None, :] + b0 * (ts - 1.0) + 0.5 * b1 * (ts**2 - 1.0)
            out[:, :] = np.where(nz, out, flat)
        return out[0] if t_end.ndim == 0 else out


def exact_solution(field: VelocityField, x1, t_end):
    """Closed-form trajectory value x(t_end) starting from x(1) = x1.

    ``t_end`` may be a scalar (returns (d,)) or an array (returns (m, d)).
    Only analytic fields have one; learned fields raise.
    """
    if isinstance(field, (TimeOnlyField, LinearStateField)):
        return field.exact_from_noise(x1, t_end)
    raise ValueError(f"no closed-form solution for field of kind {field.kind!r}")


def linear_interpolant(x_data, x_noise, t):
    """Convex combination (1-t)*x_data + t*x_noise; t must lie in [0, 1]."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise ValueError(f"t must lie in [0, 1], got {t}")
    x_data = np.asarray(x_data, dtype=np.float64)
    x_noise = np.asarray(x_noise, dtype=np.float64)
    if x_data.shape != x_noise.shape:
        raise ValueError("x_data and x_noise must share a shape")
    if x_data.ndim == 2 and t_arr.ndim == 1:
        t_arr = t_arr[:, None]
    return (1.0 - t_arr) * x_data + t_arr * x_noise


def fm_target(x_data, x_noise):
    """Regression target: the interpolant's time derivative, x_noise - x_data."""
    x_data = np.asarray(x_data, dtype=np.float64)
    x_noise = np.asarray(x_noise, dtype=np.float64)
    if x_data.shape != x_noise.shape:
        raise ValueError(
            f"dimension mismatch: {x_data.shape} vs {x_noise.shape}"
        )
    return x_noise - x_data


@dataclass
class FlowProblem:
    """A toy transport problem: data sampler at t=0, standard normal at t=1."""

    name: str
    dim: int
    data_sampler: Callable[[int, np.random.Generator], np.ndarray]

    @staticmethod
    def toy(kind: str) -> "FlowProblem":
        return FlowProblem(name=kind, dim=2, data_sampler=data_metrics.dataset_sampler(kind))

    def sample_data(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.asarray(self.data_sampler(n, rng), dtype=np.float64)

    def sample_noise(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.dim))


class LearnedField(VelocityField):
    """MLP velocity field over the input [x, sinusoidal(t)]."""

    kind = "learned"

    def __init__(self, model: MlpModel):
        cfg = model.feature_config
        super().__init__(int(cfg["dim"]))
        self.model = model
        self.t_freqs = int(cfg["t_freqs"])

    def _evaluate(self, x, t):
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        t_rows = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.float64)), (xb.shape[0],))
        from .nnet import mlp_forward  # local import keeps module load cheap

        out = mlp_forward(self.model, np.concatenate(
            [xb, sinusoidal_features(t_rows, self.t_freqs)], axis=1))
        return out[0] if single else out

    def save(self, path) -> None:
        save_checkpoint(self.model, path, kind=BACKBONE_KIND)

    @classmethod
    def load(cls, path) -> "LearnedField":
        return cls(load_checkpoint(path, expected_kind=BACKBONE_KIND))


@dataclass
class BackboneTrainConfig:
    """Hyperparameters for fitting the toy backbone by velocity regression."""

    iterations: int
    hidden: tuple = (64, 64, 64)
    t_freqs: int = 4
    batch: int = 256
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.batch < 1 or self.lr <= 0 or self.t_freqs < 1:
            raise ValueError(f"invalid training config: {self}")


def train_backbone(problem: FlowProblem, config: BackboneTrainConfig):
    """Regress an MLP onto the interpolant's velocity target with Adam/MSE.

    Returns ``(field, history)`` where history is a list of (iteration, loss)
    pairs. Deterministic per seed; zero iterations returns the freshly
    initialized field untouched. Aborts on a non-finite loss.
    """
    dims = [problem.dim + 2 * config.t_freqs, *config.hidden, problem.dim]
    model = mlp_init(dims, config.seed, feature_config={
        "kind": BACKBONE_KIND,
        "dim": problem.dim,
        "t_freqs": config.t_freqs,
    })
    state = adam_init(model, config.lr)
    rng = np.random.default_rng([config.seed, 0xB0])
    history: list[tuple[int, float]] = []
    for it in range(config.iterations):
        x_data = problem.sample_data(config.batch, rng)
        x_noise = problem.sample_noise(config.batch, rng)
        t = rng.random(config.batch)
        x_t = linear_interpolant(x_data, x_noise, t)
        inputs = np.concatenate([x_t, sinusoidal_features(t, config.t_freqs)], axis=1)
        loss, grads = grad_mse(model, inputs, fm_target(x_data, x_noise))
        if not np.isfinite(loss):
            raise RuntimeError(
                f"backbone training diverged at iteration {it}: loss={loss} "
                f"(lr={config.lr}, batch={config.batch}, seed={config.seed})"
            )
        model, state = adam_step(model, grads, state)
        history.append((it, loss))
    return LearnedField(model), history
