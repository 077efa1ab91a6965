"""Joint distributions of environmental variables and their exact samplers.

Two families are supported:

* conditional (hierarchical) metocean models, where significant wave height
  follows a 3-parameter Weibull law and the remaining variables are drawn
  conditionally on it with link-function parameters;
* Gaussian and Gaussian-mixture models, used as test oracles because the
  distribution of every linear projection is known in closed form.

All sampling uses numpy's PCG64 bit generator seeded directly with the
integer seed, so ``sample(model, n, seed)`` is bit-reproducible.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DegenerateConditionalError, ParameterError

SCHEMA_VERSION = 1

__all__ = [
    "Weibull3P",
    "ConditionalLink",
    "JointModel",
    "Hierarchical2D",
    "Hierarchical3D",
    "MultivariateNormal",
    "GaussianMixture",
    "SampleSet",
    "ConditionalParams",
    "sample",
    "conditional_params",
    "mixture_fig7",
    "ellipse_fig7",
    "table1_model",
    "table2_model",
    "model_from_dict",
    "model_to_dict",
    "load_model",
    "write_samples_csv",
    "make_rng",
]


def make_rng(seed: int) -> np.random.Generator:
    """Return the PCG64 generator used for every stochastic step."""
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True)
class Weibull3P:
    """Three-parameter Weibull distribution with support ``[gamma, inf)``."""

    alpha: float
    beta: float
    gamma: float = 0.0

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ParameterError(f"Weibull scale alpha must be > 0, got {self.alpha}")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ParameterError(f"Weibull shape beta must be > 0, got {self.beta}")
        if not math.isfinite(self.gamma):
            raise ParameterError(f"Weibull location gamma must be finite, got {self.gamma}")

    def cdf(self, x):
        z = np.maximum(np.asarray(x, dtype=float) - self.gamma, 0.0) / self.alpha
        return -np.expm1(-(z**self.beta))

    def ppf(self, p):
        p = np.asarray(p, dtype=float)
        return self.gamma + self.alpha * (-np.log1p(-p)) ** (1.0 / self.beta)


@dataclass(frozen=True)
class ConditionalLink:
    """Parameter as a function of wave height.

    ``power``: ``c1 + c2 * h**c3``; ``exponential``: ``c1 + c2 * exp(c3 * h)``.
    """

    kind: str
    c1: float
    c2: float
    c3: float

    def __post_init__(self):
        if self.kind not in ("power", "exponential"):
            raise ParameterError(f"unknown link kind {self.kind!r}")

    def __call__(self, h):
        h = np.asarray(h, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if self.kind == "power":
                return self.c1 + self.c2 * np.power(h, self.c3)
            return self.c1 + self.c2 * np.exp(self.c3 * h)

    def to_dict(self):
        return {"kind": self.kind, "c": [self.c1, self.c2, self.c3]}


class ConditionalParams(NamedTuple):
    mu_t: np.ndarray | float
    sigma_t: np.ndarray | float
    scale_u: np.ndarray | float | None = None
    shape_u: np.ndarray | float | None = None


class JointModel:
    """Base class for joint models of the environmental variable."""

    dim: int
    names: tuple[str, ...]
    tag: str

    def _draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Hierarchical2D(JointModel):
    """Weibull wave height with conditional log-normal wave period.

    ``tz_mean`` and ``tz_sd`` give the mean and standard deviation of
    ``ln T_Z`` (natural logarithm) given ``H_S = h``.
    """

    hs: Weibull3P
    tz_mean: ConditionalLink
    tz_sd: ConditionalLink
    names: tuple[str, ...] = ("Hs", "Tz")
    tag: str = "hierarchical2d"

    @property
    def dim(self):
        return 2

    def _conditional(self, h):
        mu = self.tz_mean(h)
        sigma = self.tz_sd(h)
        _check_positive("sigma_T", sigma, h)
        _check_finite("mu_T", mu, h)
        return mu, sigma

    def _draw(self, n, rng):
        h = self.hs.ppf(rng.random(n))
        mu, sigma = self._conditional(h)
        t = np.exp(mu + sigma * rng.standard_normal(n))
        return np.column_stack([h, t])


@dataclass(frozen=True)
class Hierarchical3D(Hierarchical2D):
    """Adds a conditional 2-parameter Weibull wind speed to :class:`Hierarchical2D`."""

    u_scale: ConditionalLink = None
    u_shape: ConditionalLink = None
    names: tuple[str, ...] = ("Hs", "Tz", "U10")
    tag: str = "hierarchical3d"

    def __post_init__(self):
        if self.u_scale is None or self.u_shape is None:
            raise ParameterError("Hierarchical3D needs u_scale and u_shape links")

    @property
    def dim(self):
        return 3

    def _wind(self, h):
        lam = self.u_scale(h)
        kap = self.u_shape(h)
        _check_positive("lambda_U", lam, h)
        _check_positive("kappa_U", kap, h)
        return lam, kap

    def _draw(self, n, rng):
        ht = super()._draw(n, rng)
        lam, kap = self._wind(ht[:, 0])
        u = lam * (-np.log1p(-rng.random(n))) ** (1.0 / kap)
        return np.column_stack([ht, u])


@dataclass(frozen=True, eq=False)
class MultivariateNormal(JointModel):
    mean: np.ndarray
    cov: np.ndarray
    names: tuple[str, ...] = ()
    tag: str = "multivariate_normal"
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", _cholesky(cov, mean.size, "cov"))
        if not self.names:
            object.__setattr__(self, "names", tuple(f"x{i + 1}" for i in range(mean.size)))

    @property
    def dim(self):
        return self.mean.size

    def _draw(self, n, rng):
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self._chol.T


@dataclass(frozen=True, eq=False)
class GaussianMixture(JointModel):
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    names: tuple[str, ...] = ()
    tag: str = "gaussian_mixture"
    _chols: tuple = field(init=False, repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covs, dtype=float)
        if w.ndim != 1 or w.size != means.shape[0] or covs.shape[0] != w.size:
            raise ParameterError("mixture weights, means and covs disagree in length")
        if np.any(w < 0) or not math.isclose(w.sum(), 1.0, abs_tol=1e-12):
            raise ParameterError(f"mixture weights must be non-negative and sum to 1, got {w}")
        d = means.shape[1]
        chols = tuple(_cholesky(c, d, f"covs[{i}]") for i, c in enumerate(covs))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)
        object.__setattr__(self, "_chols", chols)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"x{i + 1}" for i in range(d)))

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def mean(self):
        return self.weights @ self.means

    def _draw(self, n, rng):
        labels = rng.choice(self.weights.size, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        out = np.empty_like(z)
        for i, chol in enumerate(self._chols):
            rows = labels == i
            out[rows] = self.means[i] + z[rows] @ chol.T
        return out


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Monte Carlo sample of a joint model; rows are realisations."""

    points: np.ndarray
    seed: int
    model_tag: str
    names: tuple[str, ...] = ()

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


def sample(model: JointModel, n: int, seed: int) -> SampleSet:
    """Draw ``n`` independent realisations of ``model`` with a fixed seed."""
    n = int(n)
    if n < 1:
        raise ParameterError(f"sample count must be >= 1, got {n}")
    pts = model._draw(n, make_rng(seed))
    pts.setflags(write=False)
    return SampleSet(points=pts, seed=int(seed), model_tag=model.tag, names=tuple(model.names))


def conditional_params(model: Hierarchical2D, h) -> ConditionalParams:
    """Evaluate the link functions of a hierarchical model at wave height ``h``.

    Raises
    ------
    DegenerateConditionalError
        If a standard deviation, scale or shape is not strictly positive at ``h``.
    """
    if not isinstance(model, Hierarchical2D):
        raise ParameterError("conditional parameters are defined for hierarchical models only")
    scalar = np.ndim(h) == 0
    mu, sigma = model._conditional(h)
    lam = kap = None
    if isinstance(model, Hierarchical3D):
        lam, kap = model._wind(h)
    if scalar:
        mu, sigma = float(mu), float(sigma)
        lam = None if lam is None else float(lam)
        kap = None if kap is None else float(kap)
    return ConditionalParams(mu, sigma, lam, kap)


def _check_positive(name, value, h):
    value = np.asarray(value)
    bad = ~(value > 0) | ~np.isfinite(value)
    if np.any(bad):
        hb = np.broadcast_to(np.asarray(h, dtype=float), value.shape)[bad].flat[0]
        vb = value[bad].flat[0]
        raise DegenerateConditionalError(f"{name}(h={hb:g}) = {vb:g} is not a positive finite value")


def _check_finite(name, value, h):
    value = np.asarray(value)
    if not np.all(np.isfinite(value)):
        raise DegenerateConditionalError(f"{name} is not finite for some h")


def _cholesky(cov, d, label):
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (d, d):
        raise ParameterError(f"{label} must be {d}x{d}, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise ParameterError(f"{label} is not symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ParameterError(f"{label} is not positive definite") from None


# -- presets -----------------------------------------------------------------


def table1_model() -> Hierarchical2D:
    """Wave height / zero-upcrossing period model of the 2D example."""
    return Hierarchical2D(
        hs=Weibull3P(2.776, 1.471, 0.8888),
        tz_mean=ConditionalLink("power", 0.1000, 1.4890, 0.1901),
        tz_sd=ConditionalLink("exponential", 0.0400, 0.1748, -0.2243),
    )


def table2_model(d3: float = 1.0) -> Hierarchical3D:
    """Wave height / period / wind speed model of the 3D example.

    The exponent ``d3`` of the wind shape link is not given by the source
    data and defaults to 1.
    """
    return Hierarchical3D(
        hs=Weibull3P(1.798, 1.214, 0.856),
        tz_mean=ConditionalLink("power", -1.010, 2.847, 0.075),
        tz_sd=ConditionalLink("exponential", 0.161, 0.146, -0.683),
        u_scale=ConditionalLink("power", 2.58, 0.12, 1.60),
        u_shape=ConditionalLink("power", 4.6, 2.05, d3),
    )


def mixture_fig7() -> GaussianMixture:
    """Three-component bivariate mixture that admits no proper contour at pe=0.15."""
    return GaussianMixture(
        weights=[0.8, 0.1, 0.1],
        means=[[0.0, 0.0], [0.5, 1.0], [-0.5, 1.0]],
        covs=[0.16 * np.eye(2), 0.04 * np.eye(2), 0.04 * np.eye(2)],
    )


def ellipse_fig7() -> MultivariateNormal:
    """Centred correlated bivariate normal paired with :func:`mixture_fig7`."""
    return MultivariateNormal(mean=[0.0, 0.0], cov=0.16 * np.array([[1.0, 0.5], [0.5, 1.0]]))


# -- (de)serialisation ---------------------------------------------------------


def _link_from(d, path):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object with 'kind' and 'c'")
    try:
        c = [float(x) for x in d["c"]]
        kind = d["kind"]
    except KeyError as exc:
        raise ConfigError(f"{path}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError):
        raise ConfigError(f"{path}.c: coefficients must be numbers") from None
    if len(c) != 3:
        raise ConfigError(f"{path}.c: expected 3 coefficients, got {len(c)}")
    try:
        return ConditionalLink(kind, *c)
    except ParameterError as exc:
        raise ConfigError(f"{path}.kind: {exc}") from None


def _require(d, key, path):
    if key not in d:
        raise ConfigError(f"{path}: missing field {key!r}")
    return d[key]


def model_from_dict(d: dict, path: str = "model") -> JointModel:
    """Build a model from its JSON-compatible description.

    Schema (``schema_version`` 1)::

        {"kind": "hierarchical2d",
         "hs": {"alpha": .., "beta": .., "gamma": ..},
         "tz_mean": {"kind": "power", "c": [a1, a2, a3]},
         "tz_sd": {"kind": "exponential", "c": [b1, b2, b3]}}

    ``hierarchical3d`` adds ``u_scale`` and ``u_shape`` links.
    ``multivariate_normal`` takes ``mean`` and ``cov``; ``gaussian_mixture``
    takes ``weights``, ``means`` and ``covs``. ``names`` is optional.
    """
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object")
    version = d.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path}.schema_version: unsupported version {version!r}")
    kind = _require(d, "kind", path)
    names = tuple(d.get("names", ()))
    try:
        if kind in ("hierarchical2d", "hierarchical3d"):
            hs = _require(d, "hs", path)
            try:
                marginal = Weibull3P(
                    float(_require(hs, "alpha", f"{path}.hs")),
                    float(_require(hs, "beta", f"{path}.hs")),
                    float(hs.get("gamma", 0.0)),
                )
            except ParameterError as exc:
                raise ConfigError(f"{path}.hs: {exc}") from None
            common = dict(
                hs=marginal,
                tz_mean=_link_from(_require(d, "tz_mean", path), f"{path}.tz_mean"),
                tz_sd=_link_from(_require(d, "tz_sd", path), f"{path}.tz_sd"),
            )
            if names:
                common["names"] = names
            if kind == "hierarchical2d":
                return Hierarchical2D(**common)
            return Hierarchical3D(
                **common,
                u_scale=_link_from(_require(d, "u_scale", path), f"{path}.u_scale"),
                u_shape=_link_from(_require(d, "u_shape", path), f"{path}.u_shape"),
            )
        if kind == "multivariate_normal":
            return MultivariateNormal(_require(d, "mean", path), _require(d, "cov", path), names=names)
        if kind == "gaussian_mixture":
            return GaussianMixture(
                _require(d, "weights", path), _require(d, "means", path), _require(d, "covs", path), names=names
            )
    except ParameterError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    raise ConfigError(f"{path}.kind: unknown model kind {kind!r}")


def model_to_dict(model: JointModel) -> dict:
    out: dict = {"schema_version": SCHEMA_VERSION, "kind": model.tag, "names": list(model.names)}
    if isinstance(model, Hierarchical2D):
        out["hs"] = {"alpha": model.hs.alpha, "beta": model.hs.beta, "gamma": model.hs.gamma}
        out["tz_mean"] = model.tz_mean.to_dict()
        out["tz_sd"] = model.tz_sd.to_dict()
        if isinstance(model, Hierarchical3D):
            out["u_scale"] = model.u_scale.to_dict()
            out["u_shape"] = model.u_shape.to_dict()
    elif isinstance(model, MultivariateNormal):
        out["mean"] = model.mean.tolist()
        out["cov"] = model.cov.tolist()
    elif isinstance(model, GaussianMixture):
        out["weights"] = model.weights.tolist()
        out["means"] = model.means.tolist()
        out["covs"] = model.covs.tolist()
    return out


def load_model(path) -> JointModel:
    """Read a model description from a JSON file (see :func:`model_from_dict`)."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if isinstance(data, dict) and "model" in data:
        return model_from_dict(data["model"], "model")
    return model_from_dict(data, "model")


def write_samples_csv(samples: SampleSet, path, names: Sequence[str] | None = None) -> None:
    names = list(names or samples.names or [f"x{i + 1}" for i in range(samples.dim)])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in samples.points:
            writer.writerow([repr(float(v)) for v in row])
