import numpy as np
import pytest

from lookahes.acquisition import AcqConfig
from lookahes.core import BoxDomain, ConfigError, Dataset
from lookahes.costs import CostModel
from lookahes.environments import from_function
from lookahes.runner import (
    ExperimentConfig,
    RunRecord,
    RunResult,
    compute_metrics,
    config_from_dict,
    max_step_violation,
    run_experiment,
    with_override,
)
from lookahes.surrogate import fit_gp, posterior


@pytest.fixture(scope="module")
def quadratic():
    # maximum at x = 0.3
    return from_function("quad1", lambda x: (x[:, 0] - 0.3) ** 2, BoxDomain([0.0], [1.0]), optimum_raw=[0.3])


def _small(kind="ei", cost=None, **acq):
    acq.setdefault("restarts", 4)
    if kind == "lookahes":
        acq.setdefault("horizon", 3)
        acq.setdefault("grad_steps", 10)
    return ExperimentConfig(env={"name": "ackley", "noise_sigma": 0.05}, cost=cost or CostModel.euclidean(),
                            acq=AcqConfig(kind=kind, **acq), n_init=8, n_steps=4)


def test_single_sr_step_lands_on_posterior_mean_argmax(quadratic):
    cfg = ExperimentConfig(env={"name": "quad1"}, cost=CostModel.euclidean(lam=0.0), acq=AcqConfig(kind="sr", restarts=8),
                           n_init=6, n_steps=1)
    res = run_experiment(cfg, 0, env=quadratic)
    assert len(res.records) == 1
    gp = fit_gp(Dataset(res.initial_points, res.initial_values))
    grid = np.linspace(0, 1, 2001)[:, None]
    mean, _ = posterior(gp, grid)
    assert abs(res.records[0].x[0] - grid[np.argmax(mean), 0]) < 0.1


def test_noiseless_run_reaches_optimum(quadratic):
    cfg = ExperimentConfig(env={"name": "quad1"}, acq=AcqConfig(kind="ei", restarts=8), n_init=6, n_steps=3)
    res = run_experiment(cfg, 1, env=quadratic)
    assert res.final_regret < 0.05


@pytest.mark.parametrize("kind", ["ei", "ucb", "lookahes", "msl"])
def test_spotlight_trajectory_is_feasible(kind):
    cost = CostModel.spotlight(r=0.1)
    res = run_experiment(_small(kind, cost), 3)
    assert len(res.records) == 4
    assert max_step_violation(res, cost) <= 1e-9


def test_same_seed_same_result():
    cfg = _small("lookahes")
    a, b = run_experiment(cfg, 5), run_experiment(cfg, 5)
    for ra, rb in zip(a.records, b.records):
        assert np.array_equal(ra.x, rb.x) and ra.y == rb.y and ra.acq_value == rb.acq_value
        assert np.array_equal(ra.action, rb.action)
    assert np.array_equal(a.final_action, b.final_action)
    c = run_experiment(cfg, 6)
    assert not np.array_equal(a.trajectory, c.trajectory)


def test_record_bookkeeping():
    res = run_experiment(_small("ucb", CostModel.nonmarkov(k=1.0, d=0.2, m=0.1)), 2)
    total = 0.0
    best = -np.inf
    bests = []
    for rec in res.records:
        total += rec.step_cost
        assert rec.cum_cost == pytest.approx(total, abs=1e-9)
        assert rec.regret >= -1e-9
        assert rec.wall_ms == 0.0
        best = max(best, rec.y)
        bests.append(best)
    assert np.all(np.diff(bests) >= 0)
    assert res.final_regret == pytest.approx(3.0 - res.final_value)


def test_huge_lambda_final_action_stays_near_last_query():
    cost = CostModel.spotlight(r=0.1, lam=1e6)
    res = run_experiment(_small("ei", cost), 4)
    assert np.linalg.norm(res.final_action - res.trajectory[-1]) <= 0.1 + 1e-9


def test_explicit_start_point_anchors_trajectory():
    cfg = ExperimentConfig(env={"name": "ackley"}, acq=AcqConfig(kind="sr", restarts=4), n_init=5, n_steps=2,
                           start_point=(0.1, 0.9))
    res = run_experiment(cfg, 0)
    assert np.array_equal(res.trajectory[0], [0.1, 0.9])


def test_pessimal_default_start():
    res = run_experiment(_small("sr"), 0)
    assert np.array_equal(res.start, res.initial_points[np.argmin(res.initial_values)])


def test_zero_steps_still_reports_final_action():
    cfg = ExperimentConfig(env={"name": "ackley"}, acq=AcqConfig(kind="ei", restarts=4), n_init=5, n_steps=0)
    res = run_experiment(cfg, 0)
    assert res.records == [] and res.final_action.shape == (2,)


def _fake(value, seed=0, regrets=(0.0, 0.0), config=None):
    recs = [RunRecord(i + 1, np.zeros(2), 0.0, 0.5, 0.5 * (i + 1), 0.0, np.zeros(2), g) for i, g in enumerate(regrets)]
    config = config or ExperimentConfig().to_dict()
    return RunResult(recs, np.zeros(2), value, 3.0 - value, config, seed, np.zeros(2))


def test_metrics_median_and_alias():
    runs = [_fake(2.97, 0), _fake(2.99, 1), _fake(2.98, 2)]
    m = compute_metrics(runs[0], runs[1:])
    assert m["final_value"] == pytest.approx(2.98, abs=1e-12)
    assert round(m["value_scaled"], 4) == 0.9933
    assert m["n_seeds"] == 3


def test_metrics_single_run():
    m = compute_metrics(_fake(3.0))
    assert m["value_scaled"] == 1.0
    assert m["cumulative_regret"] == 0.0
    assert m["cumulative_cost"] == 1.0


def test_metrics_reject_mixed_configs():
    other = ExperimentConfig(n_steps=7).to_dict()
    with pytest.raises(ConfigError):
        compute_metrics(_fake(1.0), [_fake(1.0, 1, config=other)])


def test_config_from_dict_round_trip():
    doc = {
        "env": {"name": "levy", "noise_sigma": 0.01},
        "cost": {"kind": "spotlight"},
        "acquisition": {"kind": "ucb", "beta": 3.0},
        "policy": {"grad_steps": 7},
        "run": {"n_init": 10, "n_steps": 3, "seeds": [1, 2]},
    }
    cfg = config_from_dict(doc)
    assert cfg.cost.r == 0.1 and cfg.acq.beta == 3.0 and cfg.acq.grad_steps == 7 and cfg.seeds == (1, 2)
    assert config_from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("doc", [
    {"env": {"nmae": "ackley"}},
    {"acquisition": {"kind": "thompson"}},
    {"acquisition": {"grad_steps": 3}},
    {"surrogate": {"kernel": "cauchy"}},
    {"run": {"n_init": 1}},
    {"extra": {}},
    {"cost": {"kind": "teleport"}},
])
def test_config_errors(doc):
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_override():
    cfg = with_override(ExperimentConfig(), "acquisition.horizon", 5)
    assert cfg.acq.horizon == 5
    with pytest.raises(ConfigError):
        with_override(cfg, "acquisition.bogus", 1)
    with pytest.raises(ConfigError):
        with_override(cfg, "horizon", 1)
