"""Exact Gaussian sampling on the observation grid ``T + kT/n``.

Paths are drawn as ``L z`` with ``L`` the Cholesky factor of the dense Gram
matrix.  Normal draws come from a Philox counter-based generator keyed by
``(seed, replication)`` so every replication is an independent, reproducible
stream whatever order or thread it runs in.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

from .kernels import CovarianceModel, ProcessFamily, covariance

__all__ = [
    "ObservationGrid",
    "GridSample",
    "FactorizationResult",
    "NotPSDError",
    "gram_matrix",
    "cholesky_psd",
    "generator",
    "sample_path",
    "sample_paths",
    "second_differences",
    "fbm_cov_second_diff",
]

SCHEMA_VERSION = 1
_U64 = (1 << 64) - 1
# pairs per covariance evaluation batch in gram_matrix
_GRAM_BATCH = 400_000


@dataclass(frozen=True)
class ObservationGrid:
    T: float
    n: int

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"T must be positive and finite, got {self.T}")
        if int(self.n) != self.n or self.n < 4:
            raise ValueError(f"n must be an integer >= 4, got {self.n}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "n", int(self.n))

    @property
    def times(self) -> np.ndarray:
        k = np.arange(self.n + 1, dtype=float)
        return self.T + (k / self.n) * self.T

    def __len__(self) -> int:
        return self.n + 1


@dataclass(frozen=True)
class FactorizationResult:
    lower: np.ndarray = field(repr=False)
    jitter: float
    condition: float
    mean_diagonal: float


class NotPSDError(np.linalg.LinAlgError):
    def __init__(self, ladder, minor_index: int):
        self.ladder = tuple(ladder)
        self.minor_index = minor_index
        super().__init__(
            f"matrix is not positive semidefinite: Cholesky failed at leading minor "
            f"{minor_index} for every jitter in {self.ladder}"
        )


def gram_matrix(model: CovarianceModel, grid: ObservationGrid) -> np.ndarray:
    """``M[i, j] = R(t_i, t_j)``, filled from the upper triangle."""
    t = grid.times
    m = t.size
    M = np.empty((m, m))
    row = 0
    while row < m:
        # gather whole rows until a batch is large enough
        stop = row
        count = 0
        while stop < m and count < _GRAM_BATCH:
            count += m - stop
            stop += 1
        ii = np.concatenate([np.full(m - r, r) for r in range(row, stop)])
        jj = np.concatenate([np.arange(r, m) for r in range(row, stop)])
        vals = covariance(model, t[ii], t[jj])
        M[ii, jj] = vals
        M[jj, ii] = vals
        row = stop
    return M


def _jitter_ladder(mean_diag: float, max_jitter: float) -> list[float]:
    ladder = [0.0]
    j = 1e-14 * mean_diag
    while j <= max_jitter * (1 + 1e-12):
        ladder.append(j)
        j *= 100.0
    return ladder


def cholesky_psd(M: np.ndarray, max_jitter: float | None = None) -> FactorizationResult:
    """Lower Cholesky factor of ``M + jI`` for the smallest working ``j``.

    ``j`` climbs the ladder ``0, 1e-14 d, 1e-12 d, ...`` (``d`` the mean
    diagonal) up to ``max_jitter``, which defaults to ``1e-8 d``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    if not np.array_equal(M, M.T):
        raise ValueError("matrix is not symmetric")
    d = float(np.mean(np.diag(M)))
    if max_jitter is None:
        max_jitter = 1e-8 * abs(d)
    ladder = _jitter_ladder(abs(d), max_jitter)
    info = 0
    for j in ladder:
        A = M + j * np.eye(M.shape[0]) if j else M
        c, info = lapack.dpotrf(A, lower=1, clean=1, overwrite_a=0)
        if info == 0:
            diag = np.diag(c)
            cond = float((diag.max() / diag.min()) ** 2) if diag.min() > 0 else math.inf
            return FactorizationResult(c, j, cond, d)
        if info < 0:
            raise ValueError(f"dpotrf rejected argument {-info}")
    raise NotPSDError(ladder, int(info))


def generator(seed: int, replication: int = 0) -> np.random.Generator:
    """Philox stream keyed by ``(seed, replication)``."""
    if seed < 0 or replication < 0:
        raise ValueError("seed and replication index must be nonnegative")
    key = np.array([seed & _U64, replication & _U64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class GridSample:
    grid: ObservationGrid
    values: np.ndarray = field(repr=False)
    seed: int | None = None
    replication: int = 0
    family: ProcessFamily | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.grid),):
            raise ValueError(f"expected {len(self.grid)} values, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    # -- serialisation -----------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "t", "x"])
        for k, (t, x) in enumerate(zip(self.grid.times, self.values)):
            w.writerow([k, f"{t:.17g}", f"{x:.17g}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "GridSample":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["k", "t", "x"]:
            raise ValueError("CSV sample must start with the header k,t,x")
        body = [r for r in rows[1:] if r]
        ks = [int(r[0]) for r in body]
        if ks != list(range(len(body))):
            raise ValueError("CSV sample rows must be numbered 0..n in order")
        t = np.array([float(r[1]) for r in body])
        x = np.array([float(r[2]) for r in body])
        grid = ObservationGrid(float(t[0]), len(body) - 1)
        if not np.allclose(t, grid.times, rtol=1e-13, atol=0):
            raise ValueError("CSV times do not form a grid T + kT/n")
        return cls(grid, x)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "kind": "grid_sample",
            "family": self.family.to_dict() if self.family else None,
            "T": self.grid.T,
            "n": self.grid.n,
            "seed": self.seed,
            "replication": self.replication,
            "t": self.grid.times.tolist(),
            "x": self.values.tolist(),
        }

    def to_json(self) -> str:
        # json writes floats with repr, which round-trips exactly
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "GridSample":
        d = json.loads(text)
        if d.get("schema") != SCHEMA_VERSION or d.get("kind") != "grid_sample":
            raise ValueError("not a schema-1 grid sample document")
        fam = d.get("family")
        family = ProcessFamily(fam["name"], fam["H"], fam.get("K", 1.0)) if fam else None
        return cls(
            ObservationGrid(d["T"], d["n"]),
            np.array(d["x"], dtype=float),
            seed=d.get("seed"),
            replication=d.get("replication", 0),
            family=family,
        )


def sample_paths(fact: FactorizationResult, seed: int, replications) -> np.ndarray:
    """One row per replication index.

    The normals of each row depend only on ``(seed, index)``; the product with
    the factor may differ in the last ulp between batch shapes, so callers that
    need bitwise reproducibility keep the batch composition fixed.
    """
    reps = np.atleast_1d(np.asarray(replications, dtype=np.int64))
    m = fact.lower.shape[0]
    Z = np.empty((reps.size, m))
    for i, r in enumerate(reps):
        Z[i] = generator(seed, int(r)).standard_normal(m)
    return Z @ fact.lower.T


def sample_path(
    fact: FactorizationResult,
    grid: ObservationGrid,
    seed: int,
    replication: int = 0,
    family: ProcessFamily | None = None,
) -> GridSample:
    if fact.lower.shape[0] != len(grid):
        raise ValueError(f"factor has size {fact.lower.shape[0]} but grid has {len(grid)} points")
    values = sample_paths(fact, seed, [replication])[0]
    return GridSample(grid, values, seed=seed, replication=replication, family=family)


def second_differences(sample) -> np.ndarray:
    """``x[k+2] - 2 x[k+1] + x[k]`` along the last axis."""
    x = sample.values if isinstance(sample, GridSample) else np.asarray(sample, dtype=float)
    if x.shape[-1] < 3:
        raise ValueError("need at least 3 points for second differences")
    return x[..., 2:] - 2 * x[..., 1:-1] + x[..., :-2]


def fbm_cov_second_diff(x: float, d):
    """Covariance of unit-step second differences of ``B^x`` at lag ``d``."""
    if not 0.0 < x < 1.0:
        raise ValueError(f"x must lie in (0, 1), got {x}")
    dd = np.abs(np.asarray(d, dtype=float))
    e = 2 * x
    out = -0.5 * (
        np.abs(dd - 2) ** e - 4 * np.abs(dd - 1) ** e + 6 * dd**e - 4 * (dd + 1) ** e + (dd + 2) ** e
    )
    return float(out) if np.ndim(d) == 0 else out
