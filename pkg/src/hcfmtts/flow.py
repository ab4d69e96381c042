"""Conditional flow matching: linear path, target field, loss and ODE sampler."""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, NumericError, ShapeError


@dataclass
class FlowSample:
    x0: np.ndarray
    x1: np.ndarray
    t: float
    x_t: np.ndarray


@dataclass(frozen=True)
class OdeConfig:
    steps: int = 32
    method: str = "euler"
    seed: int = 0

    def __post_init__(self):
        if int(self.steps) < 1:
            raise ContractError(f"ODE steps must be >= 1, got {self.steps}")
        if self.method not in ("euler", "midpoint"):
            raise ContractError(f"unknown ODE method {self.method!r}")


def _check_same(x0, x1):
    if np.shape(x0) != np.shape(x1):
        raise ShapeError(f"shape mismatch: {np.shape(x0)} vs {np.shape(x1)}")


def interpolate_path(x0, x1, t):
    """x_t = (1 - t) x0 + t x1; ``t`` may be a scalar or per-item array."""
    _check_same(x0, x1)
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t > 1):
        raise ContractError("t must lie in [0, 1]")
    if t.ndim:
        t = t.reshape(t.shape + (1,) * (np.ndim(x0) - t.ndim))
    return (1 - t) * x0 + t * x1


def target_field(x0, x1):
    _check_same(x0, x1)
    return np.asarray(x1) - np.asarray(x0)


def initial_noise(shape, seed):
    """The x0 draw used by :func:`sample_ode` for a given seed."""
    return np.random.default_rng(seed).standard_normal(shape)


def cfm_loss(field_model, x1, cond, rng, mask=None):
    """Mean squared error between the model field and x1 - x0.

    ``x1`` is a batch [B, ...]. Each item gets one x0 ~ N(0, I) and one
    t ~ U[0, 1] from ``rng``. ``field_model(x_t, t, cond)`` receives x_t as a
    Tensor and the per-item t array, and returns a Tensor shaped like x1.
    ``mask`` (broadcastable to x1) excludes padded elements from the mean.
    """
    x1 = np.asarray(x1)
    if x1.ndim == 0 or x1.shape[0] == 0:
        raise ContractError("cfm_loss needs a non-empty batch")
    x0 = rng.standard_normal(x1.shape).astype(x1.dtype)
    t = rng.uniform(0.0, 1.0, size=x1.shape[0])
    x_t = interpolate_path(x0, x1, t).astype(x1.dtype)
    u = target_field(x0, x1)
    v = field_model(T.Tensor(x_t), t, cond)
    diff = v - T.Tensor(u)
    sq = diff * diff
    if mask is None:
        return sq.mean()
    w = np.broadcast_to(np.asarray(mask, dtype=x1.dtype), x1.shape)
    return (sq * T.Tensor(w)).sum() * (1.0 / float(w.sum()))


def _field(field_model, x, t, cond, step):
    v = field_model(x, t, cond)
    v = v.data if isinstance(v, T.Tensor) else np.asarray(v)
    if not np.all(np.isfinite(v)):
        raise NumericError(f"non-finite field output at ODE step {step}")
    return v


def sample_ode(field_model, cond, shape, cfg, x0=None):
    """Integrate dx/dt = v(x, t, cond) from t = 0 to 1.

    x0 defaults to :func:`initial_noise` under ``cfg.seed``. Euler takes
    x <- x + h v(x, t_k); midpoint evaluates the field again at t_k + h/2.
    ``field_model`` is called with a numpy array and a float t.
    """
    x = initial_noise(shape, cfg.seed) if x0 is None else np.array(x0, dtype=np.float64)
    h = 1.0 / cfg.steps
    for k in range(cfg.steps):
        t = k * h
        v = _field(field_model, x, t, cond, k)
        if cfg.method == "midpoint":
            v = _field(field_model, x + 0.5 * h * v, t + 0.5 * h, cond, k)
        x = x + h * v
    return x
