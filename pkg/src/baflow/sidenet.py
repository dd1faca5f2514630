"""The deviation network and its chain-based training.

The SideNet is a small MLP ``S(x, v, t, dt)`` that predicts the first-order
velocity deviation around an anchor: ``v_hat(t + dt) = v + dt * S(x, v, t, dt)``.
The form guarantees v_hat equals the anchor velocity exactly at dt = 0
regardless of parameters, so a fresh (or useless) SideNet can never make the
combined sampler worse than its anchor-only reduction.

Training unrolls a K-link chain that mimics sampling: each link draws an
interval size from a truncated exponential, advances the state with the
SideNet's own node predictions and a fixed quadrature rule, then matches the
anchored lookahead prediction against the frozen backbone's velocity at the
new state. Targets are constants (stop-gradient) and chain states are
detached between links, so gradients flow only through the SideNet terms of
the current link. Each completed link costs one backbone evaluation; with the
chain-start evaluation that is K+1 backbone calls per chain. A symmetric
lookback term reuses the same two states in reverse (no extra backbone cost)
so that positive offsets are supervised as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nnet import (
    MlpModel,
    accumulate_grads,
    adam_init,
    adam_step,
    load_checkpoint,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
    mlp_init,
    save_checkpoint,
    sinusoidal_features,
    zero_grads,
)
from .quadrature import GAUSS_LEGENDRE_3, make_rule

SIDENET_KIND = "sidenet"

_TIME_TOL = 1e-9


class ChainExhausted(ValueError):
    """No room below t for a step of at least h_min; the chain ends here."""


@dataclass
class SideNetModel:
    """MLP over [x, v, sinusoidal(t), sinusoidal(dt), dt] predicting deviation per dim."""

    model: MlpModel
    dim: int
    t_freqs: int
    dt_freqs: int

    @classmethod
    def init(cls, dim: int, hidden=(64, 64), t_freqs: int = 4, dt_freqs: int = 4,
             seed: int = 0) -> "SideNetModel":
        """Fresh SideNet with a zeroed output layer: deviation is exactly 0."""
        in_dim = 2 * dim + 2 * t_freqs + 2 * dt_freqs + 1
        model = mlp_init([in_dim, *hidden, dim], seed, feature_config={
            "kind": SIDENET_KIND,
            "dim": dim,
            "t_freqs": t_freqs,
            "dt_freqs": dt_freqs,
        })
        model.weights[-1][:] = 0.0
        return cls(model=model, dim=dim, t_freqs=t_freqs, dt_freqs=dt_freqs)

    @classmethod
    def from_mlp(cls, model: MlpModel) -> "SideNetModel":
        cfg = model.feature_config
        return cls(model=model, dim=int(cfg["dim"]), t_freqs=int(cfg["t_freqs"]),
                   dt_freqs=int(cfg["dt_freqs"]))

    def save(self, path) -> None:
        save_checkpoint(self.model, path, kind=SIDENET_KIND)

    @classmethod
    def load(cls, path) -> "SideNetModel":
        return cls.from_mlp(load_checkpoint(path, expected_kind=SIDENET_KIND))

    def rows_input(self, x, v, t, dt) -> np.ndarray:
        """Assemble the flat (R, in_dim) input matrix for R anchor/offset rows."""
        return np.concatenate([
            x, v,
            sinusoidal_features(t, self.t_freqs),
            sinusoidal_features(dt, self.dt_freqs),
            dt[:, None],
        ], axis=1)

    def _normalize(self, x, v, t, dt):
        """Flatten any supported (x, v, t, dt) shape combination to rows.

        Supported: single state with scalar or (m,) offsets; a (B, d) batch
        with per-row (B,) offsets or per-row node offsets (B, m).
        Returns (X, V, T, DT, unflatten) where unflatten restores the caller's
        shape from a flat (R, d) result.
        """
        x = np.asarray(x, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        dt = np.asarray(dt, dtype=np.float64)
        if x.ndim == 1:
            if x.shape != (self.dim,) or v.shape != (self.dim,):
                raise ValueError(f"expected state/velocity of dim {self.dim}")
            t_val = float(t)
            if dt.ndim == 0:
                X, V = x[None, :], v[None, :]
                T, DT = np.array([t_val]), dt.reshape(1)
                unflatten = lambda out: out[0]
            elif dt.ndim == 1:
                m = dt.size
                X, V = np.tile(x, (m, 1)), np.tile(v, (m, 1))
                T, DT = np.full(m, t_val), dt
                unflatten = lambda out: out
            else:
                raise ValueError("single-state calls take scalar or (m,) offsets")
        elif x.ndim == 2:
            b = x.shape[0]
            T = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.float64)), (b,))
            if dt.ndim == 1 and dt.shape == (b,):
                X, V, DT = x, v, dt
                unflatten = lambda out: out
            elif dt.ndim == 2 and dt.shape[0] == b:
                m = dt.shape[1]
                X, V = np.repeat(x, m, axis=0), np.repeat(v, m, axis=0)
                T, DT = np.repeat(T, m), dt.ravel()
                unflatten = lambda out: out.reshape(b, m, self.dim)
            else:
                raise ValueError(f"offset shape {dt.shape} does not match batch {b}")
        else:
            raise ValueError("state must be (d,) or (B, d)")
        tau = T + DT
        if np.any(tau < -_TIME_TOL) or np.any(tau > 1.0 + _TIME_TOL):
            raise ValueError(
                f"offset leaves [0, 1]: t + dt spans [{tau.min()}, {tau.max()}]"
            )
        return X, V, T, DT, unflatten

    def deviation(self, x, v, t, dt) -> np.ndarray:
        """Raw deviation output S(x, v, t, dt); shape mirrors the offsets."""
        X, V, T, DT, unflatten = self._normalize(x, v, t, dt)
        return unflatten(mlp_forward(self.model, self.rows_input(X, V, T, DT)))

    def predict(self, x, v, t, dt) -> np.ndarray:
        """Anchored velocity prediction v + dt * S(x, v, t, dt).

        All offsets in one call share a single batched forward pass; the
        backbone is never involved, so its NFE counter is untouched.
        """
        X, V, T, DT, unflatten = self._normalize(x, v, t, dt)
        dev = mlp_forward(self.model, self.rows_input(X, V, T, DT))
        return unflatten(V + DT[:, None] * dev)


@dataclass
class ChainTrainConfig:
    """Chain-training hyperparameters; the defaults are the reference setup."""

    iterations: int
    chain_length: int = 8
    lambda_trunc: float = 50.0
    h_min: float = 0.01
    h_max: float = 0.5
    rule: str = GAUSS_LEGENDRE_3
    batch: int = 128
    lr: float = 1e-4
    seed: int = 0
    hidden: tuple = (64, 64)
    t_freqs: int = 4
    dt_freqs: int = 4

    def __post_init__(self):
        if self.chain_length < 1:
            raise ValueError(f"chain_length must be >= 1, got {self.chain_length}")
        if not (0.0 < self.h_min < self.h_max <= 1.0):
            raise ValueError(f"need 0 < h_min < h_max <= 1, got [{self.h_min}, {self.h_max}]")
        if self.lambda_trunc <= 0.0:
            raise ValueError(f"lambda_trunc must be positive, got {self.lambda_trunc}")
        if self.iterations < 0 or self.batch < 1 or self.lr <= 0:
            raise ValueError(f"invalid training config: {self}")


def sample_interval(rng: np.random.Generator, lam: float, t, h_min: float, h_max: float):
    """Draw an interval size from Exp(lam) truncated to [h_min, min(h_max, t)].

    Inverse-CDF sampling, so the draw is a deterministic function of the rng
    state. ``t`` may be a scalar or an array (one draw per entry). Raises
    :class:`ChainExhausted` when any t <= h_min: there is no admissible step,
    which callers treat as the end of the chain.
    """
    if lam <= 0.0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if not (0.0 < h_min < h_max):
        raise ValueError(f"need 0 < h_min < h_max, got [{h_min}, {h_max}]")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr <= h_min):
        raise ChainExhausted(f"t={t} leaves no room for a step of at least {h_min}")
    hi = np.minimum(h_max, t_arr)
    u = rng.random() if t_arr.ndim == 0 else rng.random(t_arr.shape)
    mass = -np.expm1(-lam * (hi - h_min))
    h = h_min - np.log1p(-u * mass) / lam
    return float(h) if t_arr.ndim == 0 else h


@dataclass
class _LinkRecord:
    """Detached states bracketing one chain link (everything is a constant here)."""

    rows: np.ndarray      # original batch indices of the rows still active
    h: np.ndarray         # (R,)
    x_start: np.ndarray   # (R, d)
    v_start: np.ndarray
    t_start: np.ndarray
    x_end: np.ndarray
    v_end: np.ndarray
    t_end: np.ndarray


def _chain_rollout(backbone, sidenet: SideNetModel, x_data, config: ChainTrainConfig,
                   rng: np.random.Generator):
    """Simulate the training chain; returns link records and per-row link counts.

    Each batch row is its own chain. Rows whose remaining time drops to h_min
    or below leave the chain (graceful truncation); every link costs exactly
    one backbone evaluation per active row, plus one evaluation per row at the
    chain start.
    """
    x_data = np.atleast_2d(np.asarray(x_data, dtype=np.float64))
    n_rows, dim = x_data.shape
    rule = make_rule(config.rule)
    from .flow import linear_interpolant  # deferred to avoid an import cycle

    noise = rng.standard_normal((n_rows, dim))
    t = rng.random(n_rows)
    x = linear_interpolant(x_data, noise, t)
    v = backbone(x, t)

    links = np.zeros(n_rows, dtype=int)
    records: list[_LinkRecord] = []
    rows = np.arange(n_rows)
    for _ in range(config.chain_length):
        alive = t > config.h_min
        rows, x, v, t = rows[alive], x[alive], v[alive], t[alive]
        if rows.size == 0:
            break
        h = sample_interval(rng, config.lambda_trunc, t, config.h_min, config.h_max)
        # Solver simulation: advance with the SideNet's own node predictions.
        dts = -h[:, None] * rule.nodes[None, :]
        v_hat = sidenet.predict(x, v, t, dts)
        x_next = x - h[:, None] * np.einsum("m,rmd->rd", rule.weights, v_hat)
        t_next = t - h
        v_next = backbone(x_next, t_next)
        records.append(_LinkRecord(rows, h, x, v, t, x_next, v_next, t_next))
        links[rows] += 1
        x, v, t = x_next, v_next, t_next
    return records, links


def _chain_loss_and_grads(sidenet: SideNetModel, records: list[_LinkRecord],
                          links: np.ndarray):
    """Velocity-matching loss and SideNet gradients from frozen link records.

    Per link and row the lookahead prediction ``v_start - h * S(start, -h)``
    is matched against the constant target ``v_end``, and symmetrically the
    lookback ``v_end + h * S(end, +h)`` against ``v_start``. Each row's terms
    are averaged over its completed links, then across rows.
    """
    model = sidenet.model
    grads = zero_grads(model)
    used = int(np.sum(links > 0))
    if used == 0 or not records:
        return 0.0, grads
    total = 0.0
    for rec in records:
        r = rec.rows.size
        scale = 1.0 / (links[rec.rows] * used)  # (R,)
        inp = np.vstack([
            sidenet.rows_input(rec.x_start, rec.v_start, rec.t_start, -rec.h),
            sidenet.rows_input(rec.x_end, rec.v_end, rec.t_end, rec.h),
        ])
        out, acts = mlp_forward_cached(model, inp)
        dev_neg, dev_pos = out[:r], out[r:]
        h_col = rec.h[:, None]
        resid_neg = (rec.v_start - h_col * dev_neg) - rec.v_end
        resid_pos = (rec.v_end + h_col * dev_pos) - rec.v_start
        total += float(np.sum((resid_neg**2 + resid_pos**2).sum(axis=1) * scale))
        seed = np.vstack([
            (2.0 * scale[:, None]) * resid_neg * (-h_col),
            (2.0 * scale[:, None]) * resid_pos * h_col,
        ])
        accumulate_grads(grads, mlp_backward(model, acts, seed))
    return total, grads


def chain_train_step(backbone, sidenet: SideNetModel, x_data, config: ChainTrainConfig,
                     rng: np.random.Generator):
    """One chain-training step over a batch of data points.

    Returns ``(loss, grads)`` where the loss is averaged over each chain's
    completed links and grads grip only the SideNet; the backbone is frozen
    and only ever evaluated forward.
    """
    records, links = _chain_rollout(backbone, sidenet, x_data, config, rng)
    return _chain_loss_and_grads(sidenet, records, links)


def train_sidenet(backbone, problem, config: ChainTrainConfig):
    """Adam over chain-training steps; returns ``(sidenet, history)``.

    Deterministic per seed. With ``iterations=0`` the freshly initialized
    (zero-deviation) SideNet is returned untouched.
    """
    sidenet = SideNetModel.init(problem.dim, hidden=tuple(config.hidden),
                                t_freqs=config.t_freqs, dt_freqs=config.dt_freqs,
                                seed=config.seed)
    state = adam_init(sidenet.model, config.lr)
    rng = np.random.default_rng([config.seed, 0x51DE])
    history: list[tuple[int, float]] = []
    for it in range(config.iterations):
        x_data = problem.sample_data(config.batch, rng)
        loss, grads = chain_train_step(backbone, sidenet, x_data, config, rng)
        if not np.isfinite(loss):
            raise RuntimeError(
                f"sidenet training diverged at iteration {it}: loss={loss} "
                f"(lr={config.lr}, seed={config.seed})"
            )
        sidenet.model, state = adam_step(sidenet.model, grads, state)
        history.append((it, loss))
    return sidenet, history
