import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lookahes.core import ConfigError, DomainError, SeedStream
from lookahes.environments import (
    ImageFormatError,
    box_blur,
    calibration_sample,
    env_eval,
    load_image_env,
    make_discrete_syngp,
    make_environment,
    make_synthetic,
    make_syngp,
    regret,
    rff_rbf_sample,
    styblinski_tang,
    values,
    write_pgm,
)

TWO_D = ["ackley", "alpine", "holdertable", "levy", "styblinskitang"]


@pytest.fixture(scope="module")
def ackley():
    return make_synthetic("ackley2")


@pytest.fixture(scope="module")
def syngp():
    return make_syngp()


def test_ackley_optimum_is_three(ackley):
    assert env_eval(ackley, [0.5, 0.5]) == 3.0
    assert regret(ackley, [0.5, 0.5]) == 0.0


def test_styblinski_tang_optimum_is_calibration_max():
    env = make_synthetic("styblinskitang2")
    opt = (np.array([-2.903534, -2.903534]) + 5.0) / 10.0
    assert env_eval(env, opt) == pytest.approx(3.0, abs=1e-12)
    grid = calibration_sample(2)
    assert np.max(values(env, grid)) <= 3.0
    # the closed form really is minimal there
    assert styblinski_tang(np.array([[-2.903534, -2.903534]]))[0] <= np.min(styblinski_tang(grid * 10 - 5))


def test_cosine8_origin():
    env = make_synthetic("cosine8")
    assert env.dim == 8
    assert env_eval(env, np.full(8, 0.5)) == pytest.approx(3.0, abs=1e-12)


@pytest.mark.parametrize("name", TWO_D + ["hartmann6", "ackley4"])
def test_optimum_maps_to_three_and_bounds_sample(name):
    env = make_synthetic(name)
    assert env_eval(env, env.optimum_location) == pytest.approx(3.0, abs=1e-9)
    vals = values(env, calibration_sample(env.dim, stream=None))
    assert vals.max() <= 3.0 + 1e-9
    assert vals.min() >= -3.0 - 1e-9


@given(st.sampled_from(TWO_D), st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=100, deadline=None)
def test_values_stay_in_calibrated_range(name, a, b):
    env = _cached(name)
    v = env_eval(env, [a, b])
    assert -3.05 <= v <= 3.0 + 1e-9


_CACHE = {}


def _cached(name):
    if name not in _CACHE:
        _CACHE[name] = make_synthetic(name)
    return _CACHE[name]


def test_unknown_environment():
    with pytest.raises(ConfigError):
        make_synthetic("rosenbrock")


def test_out_of_domain_rejected(ackley):
    with pytest.raises(DomainError):
        env_eval(ackley, [1.2, 0.5])
    with pytest.raises(DomainError):
        env_eval(ackley, [0.5, 0.5, 0.5])


def test_noise_std(ackley):
    env = ackley.with_noise(0.05)
    x = [0.3, 0.6]
    draws = np.array([env_eval(env, x, SeedStream(0).fork(i)) for i in range(10_000)])
    assert abs(draws.std() - 0.05) <= 0.005
    assert abs(draws.mean() - env_eval(env, x)) < 4 * 0.05 / 100
    assert env_eval(env, x) == env_eval(ackley, x)


def test_syngp_deterministic(syngp):
    probe = np.random.default_rng(0).uniform(size=(16, 2))
    again = make_syngp(stream=SeedStream(0))
    assert np.array_equal(values(syngp, probe), values(again, probe))
    other = make_syngp(stream=SeedStream(1))
    assert not np.array_equal(values(syngp, probe), values(other, probe))


def test_syngp_calibrated_max(syngp):
    assert np.max(values(syngp, calibration_sample(2))) <= 3.0 + 1e-12
    assert env_eval(syngp, syngp.optimum_location) == pytest.approx(3.0, abs=1e-12)


def test_syngp_prior_variance():
    # the prior marginal variance is the signal variance; pooled over independent draws
    g = np.linspace(0, 1, 50)
    grid = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    draws = np.array([rff_rbf_sample(0.5, 1.0, 2, 2048, SeedStream(s))(grid) for s in range(32)])
    assert 0.5 <= draws.var() <= 1.5


def test_discrete_syngp_matches_cell_centers(syngp):
    env = make_discrete_syngp(20)
    rng = np.random.default_rng(1)
    for _ in range(10):
        idx = rng.integers(0, 20, size=2)
        onehot = np.eye(20)[idx]
        center = (idx + 0.5) / 20
        assert env_eval(env, onehot) == env_eval(syngp, center)
        assert env_eval(env, center + 0.01) == env_eval(syngp, center)


def test_make_environment_dispatch():
    env = make_environment({"name": "levy", "noise_sigma": 0.01})
    assert env.noise_sigma == 0.01 and env.dim == 2
    with pytest.raises(ConfigError):
        make_environment({"name": "image"})


def test_constant_image_is_flat(tmp_path):
    path = str(tmp_path / "flat.pgm")
    write_pgm(path, np.full((40, 30), 128))
    env = load_image_env(path, blur_radius=5)
    pts = np.random.default_rng(0).uniform(size=(50, 2))
    want = 3.0 * (2 * 128 / 255 - 1)  # linear map 0 -> -3, 255 -> +3
    assert np.allclose(values(env, pts), want, atol=1e-6)


def test_midgray_maps_to_zero(tmp_path):
    img = np.zeros((2, 2))
    img[0, 0] = 255
    path = str(tmp_path / "two.pgm")
    write_pgm(path, img)
    env = load_image_env(path, blur_radius=0)
    # bilinear midpoint between a black and a white pixel center is 127.5
    assert env_eval(env, [0.5, 0.25]) == pytest.approx(0.0, abs=1e-12)


def test_single_white_pixel_peak(tmp_path):
    img = np.zeros((11, 11))
    img[3, 7] = 255
    path = str(tmp_path / "dot.pgm")
    write_pgm(path, img)
    env = load_image_env(path, blur_radius=0)
    peak = np.array([(7 + 0.5) / 11, (3 + 0.5) / 11])
    assert env_eval(env, peak) == pytest.approx(3.0)
    assert np.allclose(env.optimum_location, peak)
    for d in ([0.03, 0], [-0.03, 0], [0, 0.03], [0, -0.03]):
        assert env_eval(env, peak + d) < 3.0


def test_blur_smooths_checkerboard():
    yy, xx = np.mgrid[:64, :64]
    img = 255.0 * (((yy // 8) + (xx // 8)) % 2)
    blurred = box_blur(img, 4)

    def max_grad(a):
        return max(np.abs(np.diff(a, axis=0)).max(), np.abs(np.diff(a, axis=1)).max())

    assert max_grad(blurred) <= max_grad(img)
    assert max_grad(blurred) < 0.5 * max_grad(img)


def test_image_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_image_env(str(tmp_path / "missing.pgm"))
    color = tmp_path / "color.ppm"
    color.write_bytes(b"P6\n2 2\n255\n" + bytes(12))
    with pytest.raises(ImageFormatError):
        load_image_env(str(color))
    short = tmp_path / "short.pgm"
    short.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
    with pytest.raises(ImageFormatError):
        load_image_env(str(short))
    deep = tmp_path / "deep.pgm"
    deep.write_bytes(b"P5\n1 1\n65535\n" + bytes(2))
    with pytest.raises(ImageFormatError):
        load_image_env(str(deep))


def test_ascii_pgm(tmp_path):
    p = tmp_path / "ascii.pgm"
    p.write_text("P2\n# comment\n2 1\n255\n0 255\n")
    env = load_image_env(str(p), blur_radius=0)
    assert env_eval(env, [0.25, 0.5]) == pytest.approx(-3.0)
    assert env_eval(env, [0.75, 0.5]) == pytest.approx(3.0)
