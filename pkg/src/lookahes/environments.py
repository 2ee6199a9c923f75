"""Benchmark objectives on the unit cube, calibrated to outputs in [-3, 3].

Every environment is maximized. Minimization test functions are negated, and
an affine map sends the calibration-sample minimum to -3 and the maximum (with
the known optimizer appended) to +3, so the regret of an action ``a`` is
``3 - env_eval(env, a)``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import ndimage
from scipy.optimize import minimize

from .core import BoxDomain, ConfigError, DiscreteDomain, DomainError, SeedStream, denormalize, sobol_points

OPTIMUM = 3.0
GRID_SIDE = 512
SOBOL_CALIB = 2**16
CHUNK = 4096  # rows per raw evaluation, bounds peak memory


@dataclass(frozen=True)
class Environment:
    name: str
    domain: object  # BoxDomain (raw coordinates) or DiscreteDomain
    raw_eval: Callable = field(repr=False)  # batched, raw coordinates -> raw values
    out_scale: float = 1.0
    out_shift: float = 0.0
    optimum_value: float = OPTIMUM
    optimum_location: np.ndarray | None = None  # normalized
    noise_sigma: float = 0.0
    box: BoxDomain | None = None  # raw box behind a discrete domain

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def discrete(self) -> bool:
        return isinstance(self.domain, DiscreteDomain)

    def with_noise(self, sigma: float) -> "Environment":
        if sigma < 0:
            raise ConfigError("noise_sigma must be nonnegative")
        return replace(self, noise_sigma=float(sigma))


def _raw_box(env: Environment) -> BoxDomain:
    return env.box if env.discrete else env.domain


def values(env: Environment, x_unit) -> np.ndarray:
    """Noise-free calibrated values at a batch of normalized points."""
    x = np.atleast_2d(np.asarray(x_unit, dtype=float))
    if x.shape[1] != env.dim:
        raise DomainError(f"point has dimension {x.shape[1]}, environment has {env.dim}")
    if np.any((x < 0.0) | (x > 1.0)) or not np.all(np.isfinite(x)):
        i = int(np.argwhere(~((x >= 0.0) & (x <= 1.0)))[0][-1])
        raise DomainError(f"coordinate {i} outside the unit interval")
    raw = env.raw_eval(denormalize(_raw_box(env), x))
    return env.out_scale * raw + env.out_shift


def env_eval(env: Environment, x, stream: SeedStream | None = None) -> float:
    """Calibrated value at one normalized point, plus Gaussian noise of
    std ``env.noise_sigma`` when a stream is given.

    On a discrete environment ``x`` may be a ``(dims, categories)`` one-hot
    matrix or a point of the unit cube (snapped to its cell center).
    """
    x = np.asarray(x, dtype=float)
    if env.discrete:
        if x.ndim == 2:
            x = env.domain.to_continuous(x)
        else:
            if np.any((x < 0.0) | (x > 1.0)):
                raise DomainError("point outside the unit cube")
            x = env.domain.snap(x)
    value = float(values(env, x[None, :])[0])
    if stream is not None and env.noise_sigma > 0:
        value += float(stream.generator().normal(0.0, env.noise_sigma))
    return value


def regret(env: Environment, action) -> float:
    return env.optimum_value - env_eval(env, action)


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------


def calibration_sample(dim: int, calib_n: int | None = None, stream: SeedStream | None = None) -> np.ndarray:
    """Dense grid for 2D (``calib_n`` per side), Sobol points otherwise."""
    if dim == 2:
        side = calib_n or GRID_SIDE
        g = np.linspace(0.0, 1.0, side)
        a, b = np.meshgrid(g, g, indexing="ij")
        return np.stack([a.ravel(), b.ravel()], axis=1)
    if dim == 1:
        return np.linspace(0.0, 1.0, calib_n or 4096)[:, None]
    return sobol_points(dim, calib_n or SOBOL_CALIB, stream)


def _calibrate(raw_values: np.ndarray):
    lo, hi = float(np.min(raw_values)), float(np.max(raw_values))
    if not hi > lo:
        raise ConfigError("cannot calibrate a constant function")
    scale = 2.0 * OPTIMUM / (hi - lo)
    return scale, OPTIMUM - scale * hi


def from_function(name: str, fn: Callable, box: BoxDomain, optimum_raw=None, calib_n: int | None = None,
                  stream: SeedStream | None = None, maximize: bool = False, refine: bool = False) -> Environment:
    """Wrap a batched raw function ``fn`` as a calibrated, maximized environment.

    ``optimum_raw`` (raw coordinates) is appended to the calibration sample.
    With ``refine`` the best sample point is polished by L-BFGS-B and the
    result is used as the optimum when none is known.
    """
    sign = 1.0 if maximize else -1.0

    def raw_eval(x):
        x = np.atleast_2d(x)
        if len(x) <= CHUNK:
            return sign * np.asarray(fn(x), dtype=float)
        return sign * np.concatenate([np.asarray(fn(x[i:i + CHUNK]), dtype=float) for i in range(0, len(x), CHUNK)])

    unit = calibration_sample(box.dim, calib_n, stream)
    pts = denormalize(box, unit)
    raw = raw_eval(pts)
    opt_unit = None
    if optimum_raw is not None:
        opt = np.atleast_2d(np.asarray(optimum_raw, dtype=float))
        lo, hi = np.asarray(box.lower), np.asarray(box.upper)
        opt_unit = (opt - lo) / (hi - lo)
    elif refine:
        start = unit[int(np.argmax(raw))]
        res = minimize(lambda u: -raw_eval(denormalize(box, u[None, :]))[0], start, method="L-BFGS-B",
                       bounds=[(0.0, 1.0)] * box.dim)
        opt_unit = np.clip(res.x, 0.0, 1.0)[None, :]
    if opt_unit is not None:
        raw = np.concatenate([raw, raw_eval(denormalize(box, opt_unit))])
    scale, shift = _calibrate(raw)
    loc = None
    if opt_unit is not None:
        loc = opt_unit[int(np.argmax(raw_eval(denormalize(box, opt_unit))))]
    return Environment(name, box, raw_eval, scale, shift, OPTIMUM, loc)


# ---------------------------------------------------------------------------
# Closed-form test functions (raw coordinates, minimization form unless noted)
# ---------------------------------------------------------------------------


def ackley(x, a=20.0, b=0.2, c=2 * np.pi):
    d = x.shape[1]
    s1 = np.sqrt(np.sum(x * x, axis=1) / d)
    s2 = np.sum(np.cos(c * x), axis=1) / d
    return -a * np.exp(-b * s1) - np.exp(s2) + a + np.e


def alpine1(x):
    return np.sum(np.abs(x * np.sin(x) + 0.1 * x), axis=1)


def holder_table(x):
    x1, x2 = x[:, 0], x[:, 1]
    return -np.abs(np.sin(x1) * np.cos(x2) * np.exp(np.abs(1.0 - np.sqrt(x1**2 + x2**2) / np.pi)))


def levy(x):
    w = 1.0 + (x - 1.0) / 4.0
    head = np.sin(np.pi * w[:, 0]) ** 2
    mid = np.sum((w[:, :-1] - 1.0) ** 2 * (1.0 + 10.0 * np.sin(np.pi * w[:, :-1] + 1.0) ** 2), axis=1)
    tail = (w[:, -1] - 1.0) ** 2 * (1.0 + np.sin(2.0 * np.pi * w[:, -1]) ** 2)
    return head + mid + tail


def styblinski_tang(x):
    return 0.5 * np.sum(x**4 - 16.0 * x**2 + 5.0 * x, axis=1)


def cosine8(x):
    """Maximization form; global max 0.8 at the origin."""
    return 0.1 * np.sum(np.cos(5.0 * np.pi * x), axis=1) - np.sum(x * x, axis=1)


_H6_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_H6_A = np.array([
    [10, 3, 17, 3.5, 1.7, 8],
    [0.05, 10, 17, 0.1, 8, 14],
    [3, 3.5, 1.7, 10, 17, 8],
    [17, 8, 0.05, 10, 0.1, 14],
])
_H6_P = 1e-4 * np.array([
    [1312, 1696, 5569, 124, 8283, 5886],
    [2329, 4135, 8307, 3736, 1004, 9991],
    [2348, 1451, 3522, 2883, 3047, 6650],
    [4047, 8828, 8732, 5743, 1091, 381],
])
HARTMANN6_OPT = np.array([0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573])


def hartmann6(x):
    inner = np.sum(_H6_A[None, :, :] * (x[:, None, :] - _H6_P[None, :, :]) ** 2, axis=2)
    return -np.sum(_H6_ALPHA[None, :] * np.exp(-inner), axis=1)


ST_OPT = -2.903534

# name -> (function, dim, box half-width or (lo, hi), optimum (raw), maximize)
_SYNTHETIC = {
    "ackley": (ackley, 2, (-32.768, 32.768), 0.0, False),
    "alpine": (alpine1, 2, (-10.0, 10.0), 0.0, False),
    "holdertable": (holder_table, 2, (-10.0, 10.0), [8.05502, 9.66459], False),
    "levy": (levy, 2, (-10.0, 10.0), 1.0, False),
    "styblinskitang": (styblinski_tang, 2, (-5.0, 5.0), ST_OPT, False),
    "cosine8": (cosine8, 8, (-1.0, 1.0), 0.0, True),
    "hartmann6": (hartmann6, 6, (0.0, 1.0), HARTMANN6_OPT, False),
}
_ALIASES = {"ackley2": "ackley", "hartmann": "hartmann6", "alpine1": "alpine", "styblinskitang2": "styblinskitang"}


def synthetic_names():
    return sorted(set(_SYNTHETIC) | set(_ALIASES) | {"ackley4", "ackley20", "ackley50"})


def make_synthetic(name: str, calib_n: int | None = None, stream: SeedStream | None = None) -> Environment:
    key = _ALIASES.get(name.lower(), name.lower())
    dim_override = None
    if key.startswith("ackley") and key[6:].isdigit():
        dim_override = int(key[6:])
        key = "ackley"
    if key not in _SYNTHETIC:
        raise ConfigError(f"unknown environment {name!r}; expected one of {synthetic_names()}")
    fn, dim, (lo, hi), opt, maximize = _SYNTHETIC[key]
    dim = dim_override or dim
    box = BoxDomain.cube(dim, lo, hi)
    opt = np.broadcast_to(np.asarray(opt, dtype=float), (dim,))
    env = from_function(name.lower(), fn, box, opt, calib_n, stream, maximize=maximize)
    return env


# ---------------------------------------------------------------------------
# Gaussian-process sample functions
# ---------------------------------------------------------------------------


def rff_rbf_sample(lengthscale: float, signal_var: float, dim: int, n_features: int, stream: SeedStream):
    """One frozen RBF prior draw ``x -> sqrt(2 s / M) sum_i w_i cos(omega_i x + b_i)``."""
    rng = stream.generator()
    omega = rng.standard_normal((n_features, dim)) / lengthscale
    phase = rng.uniform(0.0, 2.0 * np.pi, n_features)
    w = rng.standard_normal(n_features)
    scale = np.sqrt(2.0 * signal_var / n_features)

    def f(x):
        return scale * (np.cos(np.atleast_2d(x) @ omega.T + phase) @ w)

    return f


def make_syngp(lengthscale: float = np.sqrt(0.25), signal_var: float = 1.0, stream: SeedStream | None = None,
               n_features: int = 2048, calib_n: int | None = None) -> Environment:
    return _syngp(float(lengthscale), float(signal_var), stream or SeedStream(0), n_features, calib_n)


@lru_cache(maxsize=16)
def _syngp(lengthscale, signal_var, stream, n_features, calib_n):
    # calibrating on the dense grid is the slow part, hence the cache
    f = rff_rbf_sample(lengthscale, signal_var, 2, n_features, stream.fork("syngp"))
    return from_function("syngp", f, BoxDomain.cube(2, 0.0, 1.0), None, calib_n, maximize=True, refine=True)


def make_discrete_syngp(categories: int = 20, dims: int = 2, stream: SeedStream | None = None,
                        lengthscale: float = np.sqrt(0.25), signal_var: float = 1.0) -> Environment:
    """SynGP read at the centers of ``categories`` cells per axis."""
    if dims != 2:
        raise ConfigError("discrete SynGP is defined on two dimensions")
    base = make_syngp(lengthscale, signal_var, stream)
    return replace(base, name="syngp_discrete", domain=DiscreteDomain(dims, categories), box=base.domain)


# ---------------------------------------------------------------------------
# Image-derived field
# ---------------------------------------------------------------------------


class ImageFormatError(ValueError):
    pass


def _read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in (b"P5", b"P2"):
        raise ImageFormatError(f"{path}: not a grayscale PGM (magic {magic!r})")
    if maxval > 255:
        raise ImageFormatError(f"{path}: only 8-bit images are supported (maxval {maxval})")
    if magic == b"P2":
        arr = np.array(data[pos:].split(), dtype=np.int64)
    else:
        arr = np.frombuffer(data, dtype=np.uint8, offset=pos + 1)
    if arr.size < w * h:
        raise ImageFormatError(f"{path}: expected {w * h} pixels, found {arr.size}")
    img = arr[: w * h].reshape(h, w).astype(float)
    return img * (255.0 / maxval) if maxval != 255 else img


def _read_other(path: str) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - optional dependency
        raise ImageFormatError(f"{path}: only PGM is supported without Pillow") from exc
    with Image.open(path) as im:
        if im.mode not in ("L", "1"):
            raise ImageFormatError(f"{path}: image is not grayscale (mode {im.mode})")
        return np.asarray(im.convert("L"), dtype=float)


def read_grayscale(path: str) -> np.ndarray:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"image file not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic in (b"P5", b"P2"):
        return _read_pgm(path)
    if magic[:1] == b"P" and magic[1:2] in b"1346":
        raise ImageFormatError(f"{path}: not a grayscale PGM (magic {magic!r})")
    return _read_other(path)


def box_blur(img: np.ndarray, radius: int, passes: int = 3) -> np.ndarray:
    """Repeated box filter of width ``2 * radius + 1``; approximates a Gaussian."""
    out = np.asarray(img, dtype=float)
    if radius <= 0:
        return out.copy()
    for _ in range(passes):
        out = ndimage.uniform_filter(out, size=2 * radius + 1, mode="nearest")
    return out


@dataclass(frozen=True)
class ImageField:
    values: np.ndarray = field(repr=False)  # (height, width), in [0, 255]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def __call__(self, x) -> np.ndarray:
        """Bilinear value at unit-square points; ``x[:, 0]`` runs along the
        width, ``x[:, 1]`` down the rows. Pixel centers sit at ``(j + 0.5) / W``."""
        x = np.atleast_2d(x)
        col = x[:, 0] * self.width - 0.5
        row = x[:, 1] * self.height - 0.5
        return ndimage.map_coordinates(self.values, [row, col], order=1, mode="nearest")


def load_image_env(path: str, blur_radius: int = 50, stream: SeedStream | None = None) -> Environment:
    """Grayscale image as a field on [0, 1]^2 with 0 -> -3 and 255 -> +3.

    The regret reference ``optimum_value`` is the calibrated maximum pixel of
    the blurred image, which sits below +3 unless a pixel is saturated.
    """
    img = read_grayscale(path)
    blurred = box_blur(img, blur_radius)
    fld = ImageField(blurred)
    scale = 2.0 * OPTIMUM / 255.0
    idx = np.unravel_index(int(np.argmax(blurred)), blurred.shape)
    loc = np.array([(idx[1] + 0.5) / fld.width, (idx[0] + 0.5) / fld.height])
    best = scale * float(blurred.max()) - OPTIMUM
    name = os.path.splitext(os.path.basename(path))[0]
    return Environment(f"image:{name}", BoxDomain.cube(2, 0.0, 1.0), fld, scale, -OPTIMUM, best, loc)


def write_pgm(path: str, img: np.ndarray):
    """Write an 8-bit binary PGM (used by tests and examples)."""
    arr = np.clip(np.rint(np.asarray(img, dtype=float)), 0, 255).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(arr.tobytes())


def make_environment(spec: dict, stream: SeedStream | None = None) -> Environment:
    """Build an environment from a config table: ``name`` plus optional
    ``noise_sigma``, ``path``, ``blur_radius``, ``categories``, ``calib_n``,
    ``env_seed``."""
    spec = dict(spec)
    name = str(spec.get("name", "ackley")).lower()
    env_stream = SeedStream(int(spec.get("env_seed", 0)))
    if name == "syngp":
        env = make_syngp(stream=env_stream)
    elif name in ("syngp_discrete", "discrete_syngp"):
        env = make_discrete_syngp(int(spec.get("categories", 20)), 2, env_stream)
    elif name == "image":
        if not spec.get("path"):
            raise ConfigError("env.path is required for the image environment")
        env = load_image_env(str(spec["path"]), int(spec.get("blur_radius", 50)))
    else:
        calib = spec.get("calib_n")
        env = make_synthetic(name, int(calib) if calib else None)
    return env.with_noise(float(spec.get("noise_sigma", 0.0)))
