"""Analytic score models and the variance-preserving noise schedule.

Two time coordinates are in play. Diffusion time ``s`` runs from data
(``s = 0``) to noise (``s = 1``). Public sampling APIs use the reversed
denoising progress ``u = 1 - s`` so that ``u = 0`` is pure noise and
integrating ``du`` from 0 to 1 produces a sample.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DomainError, NumericError, ShapeError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta VP schedule on ``s in [0, 1]``."""

    beta_min: float = 0.1
    beta_max: float = 20.0

    def __post_init__(self):
        if not (self.beta_min > 0 and self.beta_max > 0):
            raise DomainError("beta_min and beta_max must be positive")

    def _check(self, s):
        s = float(s)
        if not 0.0 <= s <= 1.0:
            raise DomainError(f"diffusion time s={s!r} outside [0, 1]")
        return s

    def beta(self, s):
        s = self._check(s)
        return self.beta_min + s * (self.beta_max - self.beta_min)

    def log_alpha_bar(self, s):
        s = self._check(s)
        return -(self.beta_min * s + 0.5 * (self.beta_max - self.beta_min) * s * s)

    def alpha_bar(self, s):
        return float(np.exp(self.log_alpha_bar(s)))


def alpha_bar(schedule: NoiseSchedule, s: float) -> float:
    return schedule.alpha_bar(s)


def diffusion_time(u: float) -> float:
    """Map denoising progress ``u`` to diffusion time ``s = 1 - u``."""
    return 1.0 - float(u)


def _as_state(x, dim):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (dim,):
        raise ShapeError(f"state has trailing dimension {x.shape[-1:]}, expected ({dim},)")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite state passed to score")
    return x


@dataclass(frozen=True, eq=False)
class GaussianModel:
    """Data distribution N(mu, diag(var))."""

    mu: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        var = np.atleast_1d(np.asarray(self.var, dtype=np.float64))
        if mu.shape != var.shape or mu.ndim != 1:
            raise ShapeError("mu and var must be 1-D vectors of equal length")
        if np.any(var <= 0):
            raise DomainError("variances must be strictly positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "var", var)

    @property
    def dim(self):
        return self.mu.shape[0]

    def _marginal(self, s, schedule):
        a = schedule.alpha_bar(s)
        # 1 + a (v - 1) keeps the v = 1 case exactly stationary.
        return np.sqrt(a) * self.mu, 1.0 + a * (self.var - 1.0)

    def score(self, x, s, schedule):
        x = _as_state(x, self.dim)
        mean, var = self._marginal(s, schedule)
        return -(x - mean) / var

    def log_density(self, x, s, schedule):
        x = _as_state(x, self.dim)
        mean, var = self._marginal(s, schedule)
        return -0.5 * np.sum((x - mean) ** 2 / var + np.log(var) + LOG_2PI, axis=-1)


@dataclass(frozen=True, eq=False)
class GMMModel:
    """Mixture of diagonal Gaussians; weights ``w`` (K,), means/variances (K, d)."""

    w: np.ndarray
    mu: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        mu = np.atleast_2d(np.asarray(self.mu, dtype=np.float64))
        var = np.atleast_2d(np.asarray(self.var, dtype=np.float64))
        if w.ndim != 1 or mu.shape != var.shape or mu.shape[0] != w.shape[0]:
            raise ShapeError("gmm expects w (K,), mu (K, d), var (K, d)")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("gmm weights must be positive and sum to 1")
        if np.any(var <= 0):
            raise DomainError("variances must be strictly positive")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "var", var)

    @property
    def dim(self):
        return self.mu.shape[1]

    def _components(self, x, s, schedule):
        a = schedule.alpha_bar(s)
        mean = np.sqrt(a) * self.mu  # (K, d)
        var = 1.0 + a * (self.var - 1.0)
        diff = x[..., None, :] - mean  # (..., K, d)
        log_comp = np.log(self.w) - 0.5 * np.sum(diff**2 / var + np.log(var) + LOG_2PI, axis=-1)
        return diff, var, log_comp

    def score(self, x, s, schedule):
        x = _as_state(x, self.dim)
        diff, var, log_comp = self._components(x, s, schedule)
        resp = np.exp(log_comp - logsumexp(log_comp, axis=-1, keepdims=True))
        return np.sum(resp[..., None] * (-diff / var), axis=-2)

    def log_density(self, x, s, schedule):
        x = _as_state(x, self.dim)
        _, _, log_comp = self._components(x, s, schedule)
        return logsumexp(log_comp, axis=-1)


_ACTIVATIONS = {
    "tanh": np.tanh,
    "relu": lambda z: np.maximum(z, 0.0),
    "linear": lambda z: z,
}


@dataclass(frozen=True, eq=False)
class MLPModel:
    """Small dense network mapping ``concat(x, s)`` to a score estimate.

    Each layer computes ``act(W @ h + b)`` with ``W`` of shape (out, in).
    """

    layers: tuple
    dims: tuple = field(default=())

    def __post_init__(self):
        parsed = []
        for k, layer in enumerate(self.layers):
            w = np.asarray(layer["w"], dtype=np.float64)
            b = np.asarray(layer["b"], dtype=np.float64)
            act = layer.get("act", "linear")
            if act not in _ACTIVATIONS:
                raise ConfigError(f"layers[{k}].act", f"unknown activation {act!r}")
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {k}: w must be (out, in) and b (out,)")
            if parsed and parsed[-1][0].shape[0] != w.shape[1]:
                raise ShapeError(f"layer {k}: input width does not match previous layer")
            parsed.append((w, b, act))
        if not parsed:
            raise ConfigError("layers", "at least one layer required")
        if parsed[-1][0].shape[0] + 1 != parsed[0][0].shape[1]:
            raise ShapeError("network must map d + 1 inputs to d outputs")
        object.__setattr__(self, "layers", tuple(parsed))

    @property
    def dim(self):
        return self.layers[-1][0].shape[0]

    def score(self, x, s, schedule):
        x = _as_state(x, self.dim)
        t = np.full(x.shape[:-1] + (1,), float(s))
        h = np.concatenate([x, t], axis=-1)
        with np.errstate(over="ignore", invalid="ignore"):  # non-finite output is caught by callers
            for w, b, act in self.layers:
                h = _ACTIVATIONS[act](h @ w.T + b)
        return h


@dataclass(frozen=True)
class LinearDrift:
    """Synthetic field with drift ``-rate * x`` in denoising progress.

    The score is chosen so that the probability-flow drift reproduces the
    field, which makes the model usable with score-based steps as well.
    Drift is returned directly to keep arithmetic checks exact.
    """

    dim: int
    rate: float = 1.0

    def score(self, x, s, schedule):
        x = _as_state(x, self.dim)
        return -x - 2.0 * self.rate * x / schedule.beta(s)

    def drift(self, x, u, schedule):
        x = _as_state(x, self.dim)
        return -self.rate * x


def score(model, schedule: NoiseSchedule, x, s: float) -> np.ndarray:
    return model.score(x, s, schedule)


def eps_from_score(score_val, abar: float) -> np.ndarray:
    """Noise prediction from a score: ``-sqrt(1 - abar) * score``."""
    if not abar > 0:
        raise DomainError(f"alpha_bar={abar!r} must be positive")
    return -np.sqrt(max(1.0 - abar, 0.0)) * np.asarray(score_val, dtype=np.float64)


def drift(model, schedule: NoiseSchedule, x, u: float) -> np.ndarray:
    """Probability-flow field in increasing-``u`` coordinates."""
    u = float(u)
    if not 0.0 <= u <= 1.0:
        raise DomainError(f"denoising progress u={u!r} outside [0, 1]")
    custom = getattr(model, "drift", None)
    if custom is not None:
        return custom(x, u, schedule)
    s = diffusion_time(u)
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * schedule.beta(s) * (x + model.score(x, s, schedule))


# -- construction -----------------------------------------------------------

PRESETS = ("gaussian", "gmm-2", "stationary", "linear")


def make_preset(name: str, dim: int):
    """Built-in models parameterised only by dimension."""
    if dim < 1:
        raise ConfigError("dim", "must be >= 1")
    if name == "gaussian":
        # Distinct per-coordinate means and spreads so coordinates are not copies.
        mu = np.linspace(-1.0, 1.0, dim) if dim > 1 else np.ones(1)
        var = np.linspace(0.25, 1.5, dim) if dim > 1 else np.full(1, 0.5)
        return GaussianModel(mu, var)
    if name == "gmm-2":
        mu = np.stack([np.full(dim, 1.5), np.full(dim, -1.5)])
        return GMMModel([0.5, 0.5], mu, np.full((2, dim), 0.25))
    if name == "stationary":
        return GaussianModel(np.zeros(dim), np.ones(dim))
    if name == "linear":
        return LinearDrift(dim)
    raise ConfigError("model", f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


def model_from_dict(doc: dict):
    kind = doc.get("type", "mlp" if "layers" in doc else None)
    try:
        if kind == "gaussian":
            return GaussianModel(doc["mu"], doc["var"])
        if kind == "gmm":
            return GMMModel(doc["w"], doc["mu"], doc["var"])
        if kind == "mlp":
            return MLPModel(tuple(doc["layers"]), tuple(doc.get("dims", ())))
        if kind == "linear":
            return LinearDrift(int(doc["dim"]), float(doc.get("rate", 1.0)))
    except KeyError as exc:
        raise ConfigError("model", f"missing field {exc.args[0]!r} for type {kind!r}") from None
    raise ConfigError("model", f"unknown model type {kind!r}")


def load_model(path) -> object:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError("model", f"{path}: invalid JSON ({exc})") from None
    return model_from_dict(doc)


def resolve_model(ref: str, dim: int):
    """Preset name or path to a model JSON file."""
    if ref in PRESETS:
        return make_preset(ref, dim)
    model = load_model(Path(ref))
    if model.dim != dim:
        raise ConfigError("dim", f"model file has dimension {model.dim}, config says {dim}")
    return model
