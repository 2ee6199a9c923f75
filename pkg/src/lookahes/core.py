"""Domains, datasets, seeded randomness and input normalization."""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

MASK64 = (1 << 64) - 1
SOBOL_MAX_DIM = 64
_SOBOL_BITS = 30


class LookaheadError(Exception):
    """Base class for errors raised by this package."""


class DomainError(LookaheadError, ValueError):
    pass


class ConfigError(LookaheadError, ValueError):
    pass


class NumericalError(LookaheadError, ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxDomain:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) == 0 or len(lo) != len(hi):
            raise DomainError("lower and upper must be non-empty and of equal length")
        for i, (a, b) in enumerate(zip(lo, hi)):
            if not a < b:
                raise DomainError(f"lower[{i}]={a} is not below upper[{i}]={b}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @classmethod
    def cube(cls, dim: int, low: float, high: float) -> "BoxDomain":
        return cls((low,) * dim, (high,) * dim)


@dataclass(frozen=True)
class DiscreteDomain:
    """``dims`` categorical variables, each with ``categories`` levels.

    A point is a ``(dims, categories)`` one-hot matrix. Each category maps to
    the center of one of ``categories`` equal cells of [0, 1].
    """

    dims: int
    categories: int

    def __post_init__(self):
        if self.dims < 1 or self.categories < 1:
            raise DomainError("dims and categories must be positive")

    @property
    def dim(self) -> int:
        return self.dims

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.categories) + 0.5) / self.categories

    def to_continuous(self, onehot) -> np.ndarray:
        onehot = np.asarray(onehot, dtype=float)
        if onehot.shape[-2:] != (self.dims, self.categories):
            raise DomainError(f"expected one-hot of shape {(self.dims, self.categories)}, got {onehot.shape}")
        return onehot @ self.centers

    def indices(self, x) -> np.ndarray:
        """Category index per dimension of a continuous (cell-center) point."""
        x = np.asarray(x, dtype=float)
        idx = np.floor(x * self.categories).astype(int)
        return np.clip(idx, 0, self.categories - 1)

    def to_onehot(self, x) -> np.ndarray:
        idx = self.indices(x)
        return np.eye(self.categories)[idx]

    def snap(self, x) -> np.ndarray:
        return self.centers[self.indices(x)]

    def all_points(self) -> np.ndarray:
        grids = np.meshgrid(*([self.centers] * self.dims), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)


def normalize(domain: BoxDomain, x_raw) -> np.ndarray:
    x = np.asarray(x_raw, dtype=float)
    lo, hi = np.asarray(domain.lower), np.asarray(domain.upper)
    if x.shape[-1] != domain.dim:
        raise DomainError(f"point has dimension {x.shape[-1]}, domain has {domain.dim}")
    bad = np.argwhere((x < lo) | (x > hi))
    if bad.size:
        i = int(bad[0][-1])
        raise DomainError(f"coordinate {i} out of bounds [{lo[i]}, {hi[i]}]")
    return (x - lo) / (hi - lo)


def denormalize(domain: BoxDomain, x_unit) -> np.ndarray:
    u = np.asarray(x_unit, dtype=float)
    lo, hi = np.asarray(domain.lower), np.asarray(domain.upper)
    return lo + u * (hi - lo)


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


def _frozen(a, dtype=float, ndim=1):
    a = np.array(a, dtype=dtype, ndmin=ndim)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Ordered history of normalized queries, observations and step costs."""

    points: np.ndarray
    observations: np.ndarray
    step_costs: np.ndarray = field(default=None)

    def __post_init__(self):
        pts = _frozen(self.points, ndim=2)
        obs = _frozen(self.observations)
        costs = np.zeros(len(obs)) if self.step_costs is None else self.step_costs
        costs = _frozen(costs)
        if not (len(pts) == len(obs) == len(costs)):
            raise DomainError("points, observations and step_costs must have equal length")
        if np.any(costs < 0):
            raise DomainError("step costs must be nonnegative")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "step_costs", costs)

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def append(self, x, y: float, step_cost: float = 0.0) -> "Dataset":
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return Dataset(
            np.vstack([self.points, x]),
            np.append(self.observations, float(y)),
            np.append(self.step_costs, float(step_cost)),
        )


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def label_to_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & MASK64
    digest = hashlib.blake2b(str(label).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class SeedStream:
    """A named, reproducible source of randomness.

    Streams are keyed Philox generators; ``(root_seed, stream_id)`` fully
    determines the sequence.
    """

    root_seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "root_seed", int(self.root_seed) & MASK64)
        object.__setattr__(self, "stream_id", int(self.stream_id) & MASK64)

    def fork(self, label) -> "SeedStream":
        return fork_stream(self, label)

    def generator(self) -> np.random.Generator:
        key = np.array([self.root_seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


def fork_stream(parent: SeedStream, label) -> SeedStream:
    lab = label_to_int(label)
    child = _splitmix64(_splitmix64(parent.stream_id) ^ _splitmix64(lab ^ 0xD1B54A32D192ED03))
    return SeedStream(parent.root_seed, child)


def as_stream(seed) -> SeedStream:
    if isinstance(seed, SeedStream):
        return seed
    return SeedStream(int(seed))


def sobol_points(dim: int, n: int, stream: SeedStream | None = None) -> np.ndarray:
    """First ``n`` Sobol points in [0,1]^dim.

    With a stream, the points get a random digital shift (XOR of the binary
    expansion) drawn from it; without one the raw sequence is returned.
    """
    if not 1 <= dim <= SOBOL_MAX_DIM:
        raise ConfigError(f"sobol_points supports 1 <= dim <= {SOBOL_MAX_DIM}, got {dim}")
    if n < 1:
        raise ConfigError("sobol_points needs n >= 1")
    engine = qmc.Sobol(dim, scramble=False, bits=_SOBOL_BITS)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pts = engine.random(n)
    if stream is None:
        return pts
    scale = float(1 << _SOBOL_BITS)
    ints = np.round(pts * scale).astype(np.uint64)
    shift = stream.generator().integers(0, 1 << _SOBOL_BITS, size=dim, dtype=np.uint64)
    # centre of the dyadic cell keeps shifted points off the cube faces
    return ((ints ^ shift).astype(float) + 0.5) / scale


# ---------------------------------------------------------------------------
# Inner parallelism
# ---------------------------------------------------------------------------

_THREADS = 1


def set_threads(n: int):
    """Cap on worker threads for independent restarts (1 = run inline)."""
    global _THREADS
    if int(n) < 1:
        raise ConfigError("threads must be >= 1")
    _THREADS = int(n)


def get_threads() -> int:
    return _THREADS


def parallel_map(fn, items) -> list:
    """``[fn(i) for i in items]``, possibly on a thread pool; output order is
    the input order, so results never depend on the thread count."""
    items = list(items)
    if _THREADS <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=min(_THREADS, len(items))) as pool:
        return list(pool.map(fn, items))
