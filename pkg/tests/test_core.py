import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lookahes.core import (
    BoxDomain,
    ConfigError,
    Dataset,
    DiscreteDomain,
    DomainError,
    SeedStream,
    denormalize,
    fork_stream,
    normalize,
    parallel_map,
    set_threads,
    sobol_points,
)

ACKLEY_BOX = BoxDomain.cube(2, -32.768, 32.768)


def test_normalize_midpoint():
    assert np.array_equal(normalize(ACKLEY_BOX, [0.0, 0.0]), [0.5, 0.5])


def test_normalize_upper_bound():
    assert np.array_equal(normalize(BoxDomain((0.0,), (2.0,)), [2.0]), [1.0])


def test_normalize_round_trip_on_sobol_points():
    box = BoxDomain((-5.0, 0.0, 10.0), (5.0, 1e-3, 1e4))
    raw = denormalize(box, sobol_points(3, 256, SeedStream(3)))
    back = denormalize(box, normalize(box, raw))
    assert np.max(np.abs(back - raw)) < 1e-12


def test_normalize_names_offending_coordinate():
    with pytest.raises(DomainError, match="coordinate 1"):
        normalize(ACKLEY_BOX, [0.0, 40.0])


def test_box_rejects_inverted_bounds():
    with pytest.raises(DomainError):
        BoxDomain((0.0, 1.0), (1.0, 1.0))


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=5), st.data())
@settings(max_examples=50, deadline=None)
def test_round_trip_property(lower, data):
    widths = data.draw(st.lists(st.floats(1e-3, 1e3), min_size=len(lower), max_size=len(lower)))
    box = BoxDomain(tuple(lower), tuple(a + w for a, w in zip(lower, widths)))
    u = np.array(data.draw(st.lists(st.floats(0, 1), min_size=len(lower), max_size=len(lower))))
    assert np.allclose(normalize(box, np.clip(denormalize(box, u), box.lower, box.upper)), u, atol=1e-9)


def test_fork_is_deterministic():
    a = fork_stream(SeedStream(7), 0).generator().random(100)
    b = fork_stream(SeedStream(7), 0).generator().random(100)
    assert np.array_equal(a, b)


def test_fork_labels_give_distinct_streams():
    a = fork_stream(SeedStream(7), 0).generator().random(100)
    b = fork_stream(SeedStream(7), 1).generator().random(100)
    assert np.sum(a != b) >= 95


def test_root_seed_sensitivity():
    a = fork_stream(SeedStream(7), 0).generator().random(100)
    b = fork_stream(SeedStream(8), 0).generator().random(100)
    assert not np.array_equal(a, b)


def test_string_labels_are_stable():
    s = SeedStream(1)
    assert s.fork("rff") == s.fork("rff")
    assert s.fork("rff") != s.fork("vmf")


def _gray_code_sobol_1d(n, bits=30):
    # first Sobol coordinate: direction numbers v_k = 2^-k, Gray-code ordering
    out, x = [0.0], 0
    for i in range(1, n):
        c = ((~(i - 1)) & i).bit_length() - 1  # lowest zero bit of i-1
        x ^= 1 << (bits - 1 - c)
        out.append(x / float(1 << bits))
    return np.array(out)


def test_sobol_first_dimension_matches_reference_construction():
    pts = sobol_points(1, 16)[:, 0]
    assert pts[1] == 0.5
    assert np.array_equal(pts, _gray_code_sobol_1d(16))


def _star_discrepancy(pts, n_corners=64):
    # sup over anchored boxes [0, u) with u on a regular grid of corners
    u = np.arange(1, n_corners + 1) / n_corners
    inside = (pts[:, None, 0] < u[None, :])[:, :, None] & (pts[:, None, 1] < u[None, :])[:, None, :]
    frac = inside.mean(0)
    return float(np.max(np.abs(frac - u[:, None] * u[None, :])))


def test_sobol_discrepancy_beats_iid_uniforms():
    d_sobol = _star_discrepancy(sobol_points(2, 1024, SeedStream(0)))
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert d_sobol < _star_discrepancy(rng.uniform(size=(1024, 2)))


def test_sobol_is_deterministic_and_inside_cube():
    a = sobol_points(5, 100, SeedStream(2))
    assert np.array_equal(a, sobol_points(5, 100, SeedStream(2)))
    assert np.all((a > 0) & (a < 1))
    assert not np.array_equal(a, sobol_points(5, 100, SeedStream(3)))


@pytest.mark.parametrize("dim,n", [(0, 4), (65, 4), (2, 0)])
def test_sobol_rejects_unsupported_requests(dim, n):
    with pytest.raises(ConfigError):
        sobol_points(dim, n)


def test_dataset_append_keeps_prefix():
    d1 = Dataset(np.array([[0.1, 0.2], [0.3, 0.4]]), [1.0, 2.0])
    d2 = d1.append([0.5, 0.6], 3.0, 0.25)
    assert len(d1) == 2 and len(d2) == 3
    assert np.array_equal(d2.points[:2], d1.points)
    assert np.array_equal(d2.observations[:2], d1.observations)
    assert d2.step_costs[-1] == 0.25
    with pytest.raises(ValueError):
        d1.points[0, 0] = 9.0


def test_dataset_rejects_ragged_or_negative_costs():
    with pytest.raises(DomainError):
        Dataset(np.zeros((2, 1)), [1.0])
    with pytest.raises(DomainError):
        Dataset(np.zeros((1, 1)), [1.0], [-0.1])


def test_discrete_domain_round_trip():
    dom = DiscreteDomain(2, 20)
    pts = dom.all_points()
    assert pts.shape == (400, 2)
    onehot = dom.to_onehot(pts)
    assert np.all(onehot.sum(-1) == 1)
    assert np.array_equal(dom.to_continuous(onehot), pts)
    assert np.array_equal(dom.snap(pts + 0.01), pts)


def test_parallel_map_preserves_order():
    try:
        set_threads(4)
        assert parallel_map(lambda i: i * i, range(50)) == [i * i for i in range(50)]
    finally:
        set_threads(1)
    with pytest.raises(ConfigError):
        set_threads(0)
