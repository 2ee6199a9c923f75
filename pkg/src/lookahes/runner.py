"""The outer optimization loop, final-action selection and run metrics."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .acquisition import (
    AcqConfig,
    optimize_baseline,
    optimize_lookahes,
    optimize_msl,
    posterior_mean_action,
    train_policy,
)
from .core import ConfigError, Dataset, LookaheadError, SeedStream, sobol_points
from .costs import CostModel, distance, feasible, step_cost
from .environments import Environment, env_eval, make_environment, values
from .pathwise import sample_paths
from .policy import init_policy
from .surrogate import KERNELS, FitConfig, fit_gp, posterior

__version__ = "0.1.0"


@dataclass(frozen=True)
class PolicyConfig:
    hidden: int = 64
    warmup: bool = False
    warmup_steps: int = 50
    persist: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    env: dict = field(default_factory=lambda: {"name": "ackley", "noise_sigma": 0.0})
    cost: CostModel = field(default_factory=CostModel)
    acq: AcqConfig = field(default_factory=AcqConfig)
    kernel: str = "matern52"
    fit: FitConfig = field(default_factory=FitConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    n_init: int = 50
    n_steps: int = 100
    start_point: tuple | None = None
    seeds: tuple = (0,)
    out_dir: str = "runs"
    record_wall_time: bool = False

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ConfigError(f"surrogate.kernel must be one of {KERNELS}")
        if self.n_init < 2:
            raise ConfigError("run.n_init must be at least 2")
        if self.n_steps < 0:
            raise ConfigError("run.n_steps must be nonnegative")

    def to_dict(self) -> dict:
        """Resolved config in the table layout of the TOML config file."""
        acq = asdict(self.acq)
        policy = asdict(self.policy)
        for key in POLICY_ACQ_KEYS:
            policy[key] = acq.pop(key)
        fit = asdict(self.fit)
        run = dict(n_init=self.n_init, n_steps=self.n_steps, seeds=list(self.seeds), out_dir=self.out_dir,
                   record_wall_time=self.record_wall_time)
        if self.start_point is not None:
            run["start_point"] = list(self.start_point)
        if acq["lam"] is None:
            del acq["lam"]
        return {
            "env": dict(self.env),
            "cost": self.cost.to_dict(),
            "acquisition": acq,
            "surrogate": {"kernel": self.kernel, **fit},
            "policy": policy,
            "run": run,
        }


# acquisition settings that live in the [policy] table of a config file
POLICY_ACQ_KEYS = ("grad_steps", "lr", "vmf_kappa", "vmf_magnitude", "action_mode")
ENV_KEYS = ("name", "noise_sigma", "path", "blur_radius", "categories", "calib_n", "env_seed")
RUN_KEYS = ("n_init", "n_steps", "start_point", "seeds", "out_dir", "record_wall_time")
TABLES = ("env", "cost", "acquisition", "surrogate", "policy", "run")


def _check_keys(table: str, given: dict, allowed):
    for key in given:
        if key not in allowed:
            raise ConfigError(f"unknown key {table}.{key}")


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Build and validate an :class:`ExperimentConfig` from nested tables.

    Unknown tables or keys raise :class:`ConfigError` naming the key.
    """
    _check_keys("config", doc, TABLES)
    for t in TABLES:
        if t in doc and not isinstance(doc[t], dict):
            raise ConfigError(f"{t} must be a table")
    env = dict(doc.get("env", {}))
    _check_keys("env", env, ENV_KEYS)
    env.setdefault("name", "ackley")
    env.setdefault("noise_sigma", 0.0)

    cost_tab = dict(doc.get("cost", {}))
    _check_keys("cost", cost_tab, [f.name for f in fields(CostModel)])
    kind = cost_tab.get("kind", "euclidean")
    if kind == "spotlight":
        cost_tab.setdefault("r", 0.1)
    if kind == "manhattan":
        cost_tab.setdefault("p", 1)
    try:
        cost = CostModel(**cost_tab)
    except TypeError as exc:
        raise ConfigError(f"cost: {exc}") from exc

    acq_tab = dict(doc.get("acquisition", {}))
    acq_keys = [f.name for f in fields(AcqConfig) if f.name not in POLICY_ACQ_KEYS]
    _check_keys("acquisition", acq_tab, acq_keys)
    pol_tab = dict(doc.get("policy", {}))
    _check_keys("policy", pol_tab, [f.name for f in fields(PolicyConfig)] + list(POLICY_ACQ_KEYS))
    for key in POLICY_ACQ_KEYS:
        if key in pol_tab:
            acq_tab[key] = pol_tab.pop(key)
    acq = AcqConfig(**acq_tab)
    policy = PolicyConfig(**pol_tab)

    sur = dict(doc.get("surrogate", {}))
    _check_keys("surrogate", sur, ["kernel"] + [f.name for f in fields(FitConfig)])
    kernel = sur.pop("kernel", "matern52")
    fit = FitConfig(**sur)

    run = dict(doc.get("run", {}))
    _check_keys("run", run, RUN_KEYS)
    if "start_point" in run and run["start_point"] is not None:
        run["start_point"] = tuple(float(v) for v in run["start_point"])
    if "seeds" in run:
        run["seeds"] = tuple(int(s) for s in run["seeds"])
    return ExperimentConfig(env=env, cost=cost, acq=acq, kernel=kernel, fit=fit, policy=policy, **run)


def with_override(cfg: ExperimentConfig, dotted_key: str, value) -> ExperimentConfig:
    """Copy of ``cfg`` with ``table.key`` set to ``value`` (validated)."""
    if "." not in dotted_key:
        raise ConfigError(f"override key {dotted_key!r} must look like table.key")
    table, key = dotted_key.split(".", 1)
    doc = cfg.to_dict()
    if table not in doc:
        raise ConfigError(f"unknown key {dotted_key}")
    allowed = {
        "env": ENV_KEYS,
        "cost": [f.name for f in fields(CostModel)],
        "acquisition": [f.name for f in fields(AcqConfig) if f.name not in POLICY_ACQ_KEYS],
        "surrogate": ["kernel"] + [f.name for f in fields(FitConfig)],
        "policy": [f.name for f in fields(PolicyConfig)] + list(POLICY_ACQ_KEYS),
        "run": RUN_KEYS,
    }[table]
    if key not in allowed:
        raise ConfigError(f"unknown key {dotted_key}")
    doc[table][key] = value
    return config_from_dict(doc)


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    step: int
    x: np.ndarray
    y: float
    step_cost: float
    cum_cost: float
    acq_value: float
    action: np.ndarray
    regret: float
    wall_ms: float = 0.0


@dataclass
class RunResult:
    records: list
    final_action: np.ndarray | None
    final_value: float
    final_regret: float
    config: dict
    seed: int
    start: np.ndarray | None = None
    initial_points: np.ndarray | None = None
    initial_values: np.ndarray | None = None
    best_observed: float = float("nan")
    error: str | None = None
    wall_seconds: float = 0.0

    @property
    def trajectory(self) -> np.ndarray:
        pts = [self.start] + [r.x for r in self.records]
        return np.array(pts)

    @property
    def cumulative_regret(self) -> float:
        return float(sum(r.regret for r in self.records))

    @property
    def cumulative_cost(self) -> float:
        return self.records[-1].cum_cost if self.records else 0.0


class RunAborted(LookaheadError):
    """A run stopped early; ``partial`` holds the records collected so far."""

    def __init__(self, message: str, partial: RunResult):
        super().__init__(message)
        self.partial = partial


# ---------------------------------------------------------------------------
# Loop
# ---------------------------------------------------------------------------


def initial_design(env: Environment, n_init: int, stream: SeedStream) -> np.ndarray:
    pts = sobol_points(env.dim, n_init, stream.fork("init"))
    if env.discrete:
        pts = np.array([env.domain.snap(p) for p in pts])
    return pts


def select_final_action(gp, current, cost: CostModel, lam: float, last_candidate=None, restarts: int = 64,
                        stream: SeedStream | None = None, trajectory=None, domain=None) -> np.ndarray:
    """Final decision: the re-ranked action head of the last lookahead
    optimization when there is one, otherwise the cost-penalized
    posterior-mean maximizer reached from ``current``."""
    if last_candidate is not None and last_candidate.actions is not None:
        return np.asarray(last_candidate.action, dtype=float)
    return posterior_mean_action(gp, current, cost, lam, restarts, stream, trajectory, domain)


def _observe(env, x, stream):
    return env_eval(env, x, stream)


def run_experiment(cfg: ExperimentConfig, seed: int, env: Environment | None = None, progress=None) -> RunResult:
    """One seeded optimization run. ``progress(record)`` is called after each step."""
    t_start = time.perf_counter()
    root = SeedStream(int(seed))
    env = env or make_environment(cfg.env)
    acq = cfg.acq
    lam = cfg.cost.lam if acq.lam is None else acq.lam
    domain = env.domain if env.discrete else None

    X0 = initial_design(env, cfg.n_init, root)
    Y0 = np.array([_observe(env, x, root.fork(f"obs-init-{i}")) for i, x in enumerate(X0)])
    if cfg.start_point is not None:
        start = np.asarray(cfg.start_point, dtype=float)
        if start.shape != (env.dim,):
            raise ConfigError(f"run.start_point must have {env.dim} coordinates")
        if domain is not None:
            start = domain.snap(start)
        X = np.vstack([X0, start])
        Y = np.append(Y0, _observe(env, start, root.fork("obs-start")))
    else:
        # pessimal start: the worst initial observation, moved to the end
        i = int(np.argmin(Y0))
        order = [j for j in range(len(X0)) if j != i] + [i]
        X, Y = X0[order], Y0[order]
        start = X[-1].copy()
    data = Dataset(X, Y)
    trajectory = [start]
    records = []
    cum = 0.0
    policy = None
    cand = None
    gp = None
    config = cfg.to_dict()

    def partial(error=None):
        final = records[-1].action if records else None
        fv = float(values(env, final)[0]) if final is not None else float("nan")
        return RunResult(records, final, fv, env.optimum_value - fv, config, int(seed), start, X0, Y0,
                         float(np.max(data.observations)), error, time.perf_counter() - t_start)

    try:
        for t in range(1, cfg.n_steps + 1):
            t0 = time.perf_counter()
            step_stream = root.fork(f"step-{t}")
            gp = fit_gp(data, cfg.kernel, cfg.fit)
            traj = np.array(trajectory)
            if acq.kind == "lookahes":
                batch = sample_paths(gp, acq.restarts, acq.n_features, step_stream.fork("paths"))
                if policy is None or not cfg.policy.persist:
                    head = ("discrete", env.domain.categories) if domain is not None else "continuous"
                    policy = init_policy(env.dim, cfg.policy.hidden, head, root.fork("policy"))
                    if cfg.policy.warmup and t == 1:
                        policy = _warm_up(policy, gp, env, cfg, root)
                cand, policy = optimize_lookahes(policy, batch, data, cfg.cost, acq, step_stream, traj, domain)
            elif acq.kind == "msl":
                batch = sample_paths(gp, acq.restarts, acq.n_features, step_stream.fork("paths"))
                cand = optimize_msl(batch, data, cfg.cost, acq, step_stream, traj, domain)
            else:
                cand = optimize_baseline(acq.kind, gp, data, cfg.cost, acq, step_stream, traj, domain)
            q = np.asarray(cand.query, dtype=float)
            if domain is not None:
                q = domain.snap(q)
            if not feasible(cfg.cost, trajectory[-1], q):
                raise LookaheadError(f"step {t}: committed query violates the spotlight constraint")
            c = step_cost(cfg.cost, traj, q, step_stream.fork("cost-noise") if cfg.cost.cost_noise_sigma else None)
            y = _observe(env, q, step_stream.fork("obs"))
            if acq.myopic:
                action = select_final_action(gp, q, cfg.cost, lam, None, acq.restarts,
                                             step_stream.fork("action"), np.vstack([traj, q]), domain)
            else:
                action = np.asarray(cand.action, dtype=float)
            if domain is not None:
                action = domain.snap(action)
            data = data.append(q, y, c)
            trajectory.append(q)
            cum += c
            reg = env.optimum_value - float(values(env, action)[0])
            wall = (time.perf_counter() - t0) * 1e3 if cfg.record_wall_time else 0.0
            rec = RunRecord(t, q, float(y), float(c), float(cum), float(cand.acq_value), action, reg, wall)
            records.append(rec)
            if progress is not None:
                progress(rec)
    except (LookaheadError, FloatingPointError, ArithmeticError) as exc:
        raise RunAborted(f"run aborted at step {len(records) + 1}: {exc}", partial(str(exc))) from exc

    if records:
        if acq.myopic:
            gp = fit_gp(data, cfg.kernel, cfg.fit)
            final = select_final_action(gp, trajectory[-1], cfg.cost, lam, None, acq.restarts,
                                        root.fork("final-action"), np.array(trajectory), domain)
            if domain is not None:
                final = domain.snap(final)
        else:
            final = records[-1].action
    else:
        gp = fit_gp(data, cfg.kernel, cfg.fit)
        final = select_final_action(gp, start, cfg.cost, lam, None, acq.restarts, root.fork("final-action"),
                                    None, domain)
    fv = float(values(env, final)[0])
    return RunResult(records, np.asarray(final), fv, env.optimum_value - fv, config, int(seed), start, X0, Y0,
                     float(np.max(data.observations)), None, time.perf_counter() - t_start)


def _warm_up(policy, gp, env, cfg, root):
    """Pre-train the policy on random points labelled by the posterior mean."""
    stream = root.fork("warmup")
    pts = sobol_points(env.dim, cfg.n_init, stream)
    mu, _ = posterior(gp, pts)
    fake = Dataset(pts, mu)
    batch = sample_paths(gp, cfg.acq.restarts, cfg.acq.n_features, stream.fork("paths"))
    trained, *_ = train_policy(policy, batch, fake, cfg.cost, cfg.acq, None, steps=cfg.policy.warmup_steps)
    return trained


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _strip_seed(config: dict) -> dict:
    out = {k: dict(v) for k, v in config.items()}
    out["run"].pop("seeds", None)
    out["run"].pop("out_dir", None)
    return out


def compute_metrics(result: RunResult, peers=()) -> dict:
    """Final-value and regret summaries over ``result`` and its seed peers.

    ``value_scaled`` is the calibrated value divided by 3, i.e. on (-1, 1).
    """
    group = [result] + [p for p in peers if p is not result]
    ref = _strip_seed(result.config)
    for p in group[1:]:
        if _strip_seed(p.config) != ref:
            raise ConfigError("compute_metrics peers must share a config (modulo seed)")
    fv = np.array([r.final_value for r in group])
    creg = np.array([r.cumulative_regret for r in group])
    ccost = np.array([r.cumulative_cost for r in group])
    best = np.array([r.best_observed for r in group])
    return {
        "n_seeds": len(group),
        "seeds": [r.seed for r in group],
        "final_value": float(np.median(fv)),
        "final_value_mean": float(np.mean(fv)),
        "final_value_std": float(np.std(fv)),
        "value_scaled": float(np.median(fv)) / 3.0,
        "value_scaled_mean": float(np.mean(fv)) / 3.0,
        "value_scaled_std": float(np.std(fv)) / 3.0,
        "final_regret": float(np.median([r.final_regret for r in group])),
        "cumulative_regret": float(np.median(creg)),
        "cumulative_cost": float(np.median(ccost)),
        "best_observed": float(np.median(best)),
        "per_seed": [
            {"seed": r.seed, "final_value": r.final_value, "final_regret": r.final_regret,
             "cumulative_regret": r.cumulative_regret, "cumulative_cost": r.cumulative_cost,
             "best_observed": r.best_observed}
            for r in group
        ],
    }


def max_step_violation(result: RunResult, cost: CostModel) -> float:
    """Largest ``distance - r`` over consecutive committed queries (spotlight)."""
    traj = result.trajectory
    if len(traj) < 2:
        return -np.inf
    return max(distance(a, b, cost.p) - cost.r for a, b in zip(traj[:-1], traj[1:]))
