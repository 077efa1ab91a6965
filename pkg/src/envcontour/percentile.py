"""Percentile function estimation and origin transforms.

The percentile function ``C(u)`` is the upper ``pe`` quantile of the
projection ``u . X``::

    C(u) = inf{c : P(u . X > c) <= pe}

From a finite sample the infimum is attained at an order statistic: with
sorted projections ``y_(1) <= ... <= y_(n)`` the estimate is ``y_(k)`` with
``k = n - floor(n * pe)``, which is exactly the smallest sample value with at
most ``n * pe`` observations strictly above it (ties aside).
"""

from __future__ import annotations

import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, stats

from .errors import InputError, ParameterError
from .model import SampleSet, make_rng

MIN_TAIL_COUNT = 20
_NORM_TOL = 1e-12

__all__ = [
    "PercentileTable",
    "as_directions",
    "order_statistic_rank",
    "estimate_percentile",
    "estimate_table",
    "exact_percentile_gaussian",
    "exact_percentile_mixture",
    "gaussian_table",
    "recentre",
    "shift_reflection",
    "bootstrap_spread",
]


def as_directions(u) -> np.ndarray:
    """Return ``u`` as an ``(M, dim)`` float array of unit vectors."""
    arr = np.atleast_2d(np.asarray(u, dtype=float))
    norms = np.linalg.norm(arr, axis=1)
    if np.any(np.abs(norms - 1.0) > _NORM_TOL):
        raise InputError(f"directions must be unit vectors (max |norm-1| = {np.abs(norms - 1).max():.3g})")
    return arr


def _check_prob(pe):
    if not 0.0 < pe < 1.0:
        raise ParameterError(f"probability must lie in (0, 1), got {pe}")


def _check_pe(pe):
    if not 0.0 < pe < 0.5:
        raise ParameterError(f"pe must lie in (0, 0.5), got {pe}")


def order_statistic_rank(n: int, pe: float, conservative: int = 0) -> int:
    """1-based rank of the order statistic estimating ``C``.

    ``floor(n * pe)`` is rounded to 9 decimals first so that e.g.
    ``100 * 0.05`` is not mistaken for 4.999...
    """
    tail = math.floor(round(n * pe, 9))
    return int(min(max(n - tail + int(conservative), 1), n))


@dataclass(frozen=True, eq=False)
class PercentileTable:
    """Estimated percentile values for a set of directions.

    ``stderr`` holds an asymptotic standard error per direction (order
    statistic spacing estimate) when the table was estimated from samples.
    """

    pe: float
    directions: np.ndarray
    values: np.ndarray
    n: int | None = None
    seed: int | None = None
    rule: str = "exact"
    conservative: int = 0
    stderr: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        _check_pe(self.pe)
        dirs = as_directions(self.directions)
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if dirs.shape[0] != vals.size:
            raise InputError(f"{dirs.shape[0]} directions but {vals.size} values")
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "values", vals)
        if self.stderr is not None:
            object.__setattr__(self, "stderr", np.asarray(self.stderr, dtype=float).reshape(-1))

    @property
    def dim(self):
        return self.directions.shape[1]

    def __len__(self):
        return self.values.size

    def with_values(self, values, **changes) -> "PercentileTable":
        kw = dict(
            pe=self.pe,
            directions=self.directions,
            values=values,
            n=self.n,
            seed=self.seed,
            rule=self.rule,
            conservative=self.conservative,
            stderr=self.stderr,
        )
        kw.update(changes)
        return PercentileTable(**kw)

    def metadata(self) -> dict:
        return {
            "pe": self.pe,
            "n": self.n,
            "seed": self.seed,
            "rule": self.rule,
            "conservative": self.conservative,
            "directions": len(self),
            "dim": self.dim,
        }

    def write(self, csv_path, json_path=None) -> None:
        """Write ``u_1..u_dim, C_value`` rows plus a JSON metadata sidecar."""
        from .io import atomic_write_text, format_csv

        header = [f"u_{i + 1}" for i in range(self.dim)] + ["C_value"]
        rows = np.column_stack([self.directions, self.values])
        if self.stderr is not None:
            header.append("stderr")
            rows = np.column_stack([rows, self.stderr])
        atomic_write_text(csv_path, format_csv(header, rows))
        json_path = json_path or Path(csv_path).with_suffix(".json")
        atomic_write_text(json_path, json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, csv_path, json_path=None) -> "PercentileTable":
        csv_path = Path(csv_path)
        json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
        meta = json.loads(json_path.read_text(encoding="utf-8"))
        with open(csv_path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        d = int(meta["dim"])
        stderr = data[:, d + 1] if "stderr" in header else None
        return cls(
            pe=meta["pe"],
            directions=data[:, :d],
            values=data[:, d],
            n=meta.get("n"),
            seed=meta.get("seed"),
            rule=meta.get("rule", "exact"),
            conservative=meta.get("conservative", 0),
            stderr=stderr,
        )


def _points(samples) -> np.ndarray:
    pts = samples.points if isinstance(samples, SampleSet) else np.asarray(samples, dtype=float)
    pts = np.atleast_2d(pts)
    if pts.shape[0] == 0:
        raise InputError("empty sample set")
    return pts


def _warn_small(n, pe):
    if n * pe < MIN_TAIL_COUNT:
        warnings.warn(
            f"only n*pe = {n * pe:g} samples in the tail (< {MIN_TAIL_COUNT}); percentile estimate is unreliable",
            stacklevel=3,
        )


def estimate_percentile(samples, u, pe: float, conservative: int = 0) -> float:
    """Empirical percentile of the projection of ``samples`` on ``u``.

    Examples
    --------
    >>> estimate_percentile(np.arange(1.0, 101.0)[:, None], [1.0], 0.05)
    95.0
    """
    _check_pe(pe)
    pts = _points(samples)
    u = as_directions(u)[0]
    n = pts.shape[0]
    _warn_small(n, pe)
    k = order_statistic_rank(n, pe, conservative) - 1
    proj = pts @ u
    return float(np.partition(proj, k)[k])


def _threads():
    try:
        return max(1, int(os.environ.get("ENVCONTOUR_THREADS", "1")))
    except ValueError:
        return 1


def estimate_table(samples, directions, pe: float, conservative: int = 0, chunk: int = 16) -> PercentileTable:
    """Estimate ``C`` for every direction from one sample set.

    Projections are formed ``chunk`` directions at a time to bound memory.
    Output order always follows ``directions``, whatever ``ENVCONTOUR_THREADS``
    is set to.
    """
    _check_pe(pe)
    pts = _points(samples)
    dirs = as_directions(directions)
    n = pts.shape[0]
    _warn_small(n, pe)
    k = order_statistic_rank(n, pe, conservative) - 1
    # spacing estimate of the projection density at the quantile
    m = max(1, min(int(math.sqrt(n)), k, n - 1 - k))
    kth = sorted({k - m if k - m >= 0 else k, k, k + m if k + m < n else k})
    values = np.empty(dirs.shape[0])
    spread = np.empty(dirs.shape[0])

    def work(start):
        block = dirs[start : start + chunk] @ pts.T
        part = np.partition(block, kth, axis=1)
        values[start : start + chunk] = part[:, k]
        spread[start : start + chunk] = part[:, kth[-1]] - part[:, kth[0]]

    starts = range(0, dirs.shape[0], chunk)
    nthreads = _threads()
    if nthreads > 1:
        with ThreadPoolExecutor(nthreads) as pool:
            list(pool.map(work, starts))
    else:
        for s in starts:
            work(s)
    width = kth[-1] - kth[0]
    stderr = None
    if width > 0:
        # se = sqrt(pe(1-pe)/n) / f,  f ~ width / (n * spread)
        stderr = math.sqrt(pe * (1 - pe) / n) * n * spread / width
    seed = samples.seed if isinstance(samples, SampleSet) else None
    return PercentileTable(
        pe=pe,
        directions=dirs,
        values=values,
        n=n,
        seed=seed,
        rule="order-statistic",
        conservative=int(conservative),
        stderr=stderr,
    )


def exact_percentile_gaussian(mean, cov, u, pe: float):
    """Closed-form percentile of ``u . X`` for ``X ~ N(mean, cov)``, any ``pe`` in (0, 1).

    Accepts a single direction (returns a float) or an ``(M, dim)`` array.
    """
    _check_prob(pe)
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if not np.allclose(cov, cov.T):
        raise ParameterError("covariance is not symmetric")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ParameterError("covariance is not positive definite") from None
    single = np.ndim(u) == 1
    U = as_directions(u)
    sd = np.sqrt(np.einsum("ij,jk,ik->i", U, cov, U))
    out = U @ mean + stats.norm.isf(pe) * sd
    return float(out[0]) if single else out


def exact_percentile_mixture(weights, means, covs, u, pe: float):
    """Percentile of ``u . X`` for a Gaussian mixture, by root finding.

    The projection of a Gaussian mixture is a univariate Gaussian mixture,
    so ``C(u)`` solves ``sum_i w_i Phi((c - u.m_i) / s_i) = 1 - pe``.
    """
    _check_prob(pe)
    w = np.asarray(weights, dtype=float)
    means = np.atleast_2d(np.asarray(means, dtype=float))
    covs = np.asarray(covs, dtype=float)
    single = np.ndim(u) == 1
    U = as_directions(u)
    m = U @ means.T
    s = np.sqrt(np.einsum("ij,kjl,il->ik", U, covs, U))
    out = np.empty(U.shape[0])
    for r in range(U.shape[0]):
        mr, sr = m[r], s[r]

        def excess(c):
            return w @ stats.norm.sf((c - mr) / sr) - pe

        lo = (mr - 10 * sr).min()
        hi = (mr + 10 * sr).max()
        out[r] = optimize.brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return float(out[0]) if single else out


def gaussian_table(mean, cov, directions, pe: float) -> PercentileTable:
    """Exact table for a Gaussian model (no sampling error)."""
    dirs = as_directions(directions)
    return PercentileTable(pe=pe, directions=dirs, values=exact_percentile_gaussian(mean, cov, dirs, pe))


def recentre(C, u, o):
    """Percentile relative to origin ``o``: ``C - u . o``."""
    u = np.asarray(u, dtype=float)
    o = np.asarray(o, dtype=float)
    return np.asarray(C, dtype=float) - u @ o if u.ndim == 2 else float(C) - float(u @ o)


def shift_reflection(s, u, o, o_star):
    """Move a reflection point from origin ``o`` to origin ``o_star``.

    Adds the mirror image of ``o - o_star`` in the hyperplane normal to ``u``.
    Works row-wise for ``(M, dim)`` arrays of ``s`` and ``u``.
    """
    s = np.asarray(s, dtype=float)
    u = np.asarray(u, dtype=float)
    delta = np.asarray(o, dtype=float) - np.asarray(o_star, dtype=float)
    proj = u @ delta
    if u.ndim == 2:
        return s + 2.0 * proj[:, None] * u - delta
    return s + 2.0 * proj * u - delta


def bootstrap_spread(samples, directions, pe: float, n_boot: int = 20, seed: int = 0) -> np.ndarray:
    """Standard deviation of the percentile estimate over bootstrap resamples."""
    pts = _points(samples)
    dirs = as_directions(directions)
    rng = make_rng(seed)
    n = pts.shape[0]
    est = np.empty((n_boot, dirs.shape[0]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for b in range(n_boot):
            idx = rng.integers(0, n, size=n)
            est[b] = estimate_table(pts[idx], dirs, pe).values
    return est.std(axis=0, ddof=1)
