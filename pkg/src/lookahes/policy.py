"""Recurrent query policy with a hand-written reverse pass.

The network maps the running history ``(x_1, y_1), ..., (x_t, y_t)`` to the
next query: a two-layer ELU encoder, a single GRU cell and a three-layer ELU
decoder. Continuous heads squash the decoder output with a logistic; discrete
heads emit per-dimension logits and a straight-through one-hot sample.

All parameters live in one flat vector so that the optimizer, the gradient
and the finite-difference checks share a layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DiscreteDomain, SeedStream
from .costs import CostModel, soft_project, soft_project_backward, soft_step_cost, sunk_markov
from .pathwise import PathBatch, eval_paths

HIDDEN = 64
EMBED = 16


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


def _layout(dim: int, hidden: int, categories: int | None):
    if categories is None:
        inp, out = dim + 1, dim
        extra = []
    else:
        inp, out = EMBED + 1, dim * categories
        extra = [("emb_W", (categories, EMBED)), ("emb_b", (EMBED,))]
    H = hidden
    return extra + [
        ("enc1_W", (inp, H)), ("enc1_b", (H,)),
        ("enc2_W", (H, H)), ("enc2_b", (H,)),
        ("gru_Wx", (H, 3 * H)), ("gru_Uh", (H, 3 * H)), ("gru_b", (3 * H,)),
        ("dec1_W", (H, H)), ("dec1_b", (H,)),
        ("dec2_W", (H, H)), ("dec2_b", (H,)),
        ("dec3_W", (H, out)), ("dec3_b", (out,)),
    ]


def parameter_count(dim: int, hidden: int = HIDDEN, categories: int | None = None) -> int:
    return sum(int(np.prod(s)) for _, s in _layout(dim, hidden, categories))


def unpack(flat: np.ndarray, layout) -> dict:
    out, i = {}, 0
    for name, shape in layout:
        n = int(np.prod(shape))
        out[name] = flat[i:i + n].reshape(shape)
        i += n
    return out


@dataclass
class PolicyParams:
    dim: int
    hidden: int
    flat: np.ndarray
    categories: int | None = None

    @property
    def layout(self):
        return _layout(self.dim, self.hidden, self.categories)

    @property
    def discrete(self) -> bool:
        return self.categories is not None

    def views(self) -> dict:
        return unpack(self.flat, self.layout)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.dim, self.hidden, self.flat.copy(), self.categories)

    def with_flat(self, flat) -> "PolicyParams":
        return PolicyParams(self.dim, self.hidden, np.asarray(flat, dtype=float), self.categories)


def init_policy(dim: int, hidden: int = HIDDEN, head="continuous", stream: SeedStream | None = None) -> PolicyParams:
    """Fan-in scaled uniform weights, zero biases.

    ``head`` is ``"continuous"`` or ``("discrete", C)``.
    """
    categories = None
    if head != "continuous":
        kind, categories = head
        if kind != "discrete":
            raise ValueError(f"unknown head {head!r}")
    rng = (stream or SeedStream(0)).generator()
    layout = _layout(dim, hidden, categories)
    chunks = []
    for name, shape in layout:
        if len(shape) == 1:
            chunks.append(np.zeros(shape))
        else:
            bound = 1.0 / np.sqrt(shape[0])
            chunks.append(rng.uniform(-bound, bound, size=shape))
    flat = np.concatenate([c.ravel() for c in chunks])
    return PolicyParams(dim, hidden, flat, categories)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _squash(a):
    # clipping the logit keeps the output strictly inside (0, 1) in floating point
    return _sigmoid(np.clip(a, -30.0, 30.0))


def _elu(a):
    return np.where(a > 0, a, np.expm1(np.minimum(a, 0.0)))


def _elu_grad(a, out):
    return np.where(a > 0, 1.0, out + 1.0)


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def straight_through(logits: np.ndarray):
    """One-hot of the argmax along the last axis, plus the softmax used for
    the backward pass."""
    p = _softmax(logits)
    onehot = np.zeros_like(p)
    np.put_along_axis(onehot, np.argmax(logits, axis=-1)[..., None], 1.0, axis=-1)
    return onehot, p


def straight_through_backward(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of the softmax at probabilities ``p``."""
    return p * (g - np.sum(p * g, axis=-1, keepdims=True))


class _Net:
    """Stateless forward/backward helpers bound to one parameter vector."""

    def __init__(self, params: PolicyParams, domain: DiscreteDomain | None = None):
        self.params = params
        self.P = params.views()
        self.H = params.hidden
        self.dim = params.dim
        self.C = params.categories
        if self.C is not None:
            self.centers = (np.arange(self.C) + 0.5) / self.C

    # -- input ------------------------------------------------------------
    def embed(self, x):
        """Continuous coordinates -> encoder features (excluding y)."""
        if self.C is None:
            return x, None
        idx = np.clip(np.floor(x * self.C).astype(int), 0, self.C - 1)
        onehot = np.eye(self.C)[idx]  # (B, d, C)
        return self.embed_onehot(onehot), onehot

    def embed_onehot(self, onehot):
        P = self.P
        return onehot.sum(axis=1) @ P["emb_W"] + onehot.shape[1] * P["emb_b"]

    def encode(self, feat, y):
        P = self.P
        inp = np.concatenate([feat, y[:, None]], axis=1)
        a1 = inp @ P["enc1_W"] + P["enc1_b"]
        e1 = _elu(a1)
        a2 = e1 @ P["enc2_W"] + P["enc2_b"]
        e2 = _elu(a2)
        return e2, (inp, a1, e1, a2, e2)

    def encode_backward(self, cache, du, G):
        P = self.P
        inp, a1, e1, a2, e2 = cache
        da2 = du * _elu_grad(a2, e2)
        G["enc2_W"] += e1.T @ da2
        G["enc2_b"] += da2.sum(0)
        de1 = da2 @ P["enc2_W"].T
        da1 = de1 * _elu_grad(a1, e1)
        G["enc1_W"] += inp.T @ da1
        G["enc1_b"] += da1.sum(0)
        dinp = da1 @ P["enc1_W"].T
        return dinp[:, :-1], dinp[:, -1]

    # -- recurrence ---------------------------------------------------------
    def gru(self, gx, h):
        H, U = self.H, self.P["gru_Uh"]
        rz = _sigmoid(gx[:, :2 * H] + h @ U[:, :2 * H])
        r, z = rz[:, :H], rz[:, H:]
        rh = r * h
        n = np.tanh(gx[:, 2 * H:] + rh @ U[:, 2 * H:])
        h_new = n + z * (h - n)
        return h_new, (h, r, z, rh, n)

    def gru_backward(self, cache, dh_new):
        """Returns ``(dgx, dh)``. Recurrent weight gradients are left to the
        caller (see ``gru_weight_grads``) so they can be summed in one matmul."""
        H, U = self.H, self.P["gru_Uh"]
        h, r, z, rh, n = cache
        dan = dh_new * (1.0 - z) * (1.0 - n * n)
        drh = dan @ U[:, 2 * H:].T
        drz = np.concatenate([drh * h * r * (1.0 - r), dh_new * (h - n) * z * (1.0 - z)], axis=1)
        dh = dh_new * z + drh * r + drz @ U[:, :2 * H].T
        return np.concatenate([drz, dan], axis=1), dh

    def gru_weight_grads(self, caches, dgxs, G):
        H = self.H
        hs = np.concatenate([c[0] for c in caches], axis=0)
        rhs = np.concatenate([c[3] for c in caches], axis=0)
        dg = np.concatenate(dgxs, axis=0)
        G["gru_Uh"][:, :2 * H] += hs.T @ dg[:, :2 * H]
        G["gru_Uh"][:, 2 * H:] += rhs.T @ dg[:, 2 * H:]

    # -- output -------------------------------------------------------------
    def decode(self, h, prev=None, reach=None):
        """Emit the next point. For the discrete head, ``prev``/``reach`` mask
        the categories farther than ``reach`` from ``prev`` in any coordinate."""
        P = self.P
        a1 = h @ P["dec1_W"] + P["dec1_b"]
        d1 = _elu(a1)
        a2 = d1 @ P["dec2_W"] + P["dec2_b"]
        d2 = _elu(a2)
        o = d2 @ P["dec3_W"] + P["dec3_b"]
        cache = (h, a1, d1, a2, d2)
        if self.C is None:
            x = _squash(o)
            return x, cache + (x,)
        logits = o.reshape(-1, self.dim, self.C)
        if reach is not None:
            gap = np.abs(self.centers[None, None, :] - np.asarray(prev, dtype=float)[:, :, None])
            # the nearest cell always stays available
            logits = np.where(gap <= np.maximum(reach, gap.min(-1, keepdims=True)), logits, -np.inf)
        onehot, p = straight_through(logits)
        return onehot @ self.centers, cache + (onehot, p)

    def decode_backward(self, cache, dx, G, donehot=None):
        """``dx`` is the gradient w.r.t. the emitted continuous coordinates;
        ``donehot`` an optional extra gradient w.r.t. the one-hot output."""
        P = self.P
        h, a1, d1, a2, d2 = cache[:5]
        if self.C is None:
            x = cache[5]
            do = dx * x * (1.0 - x)
        else:
            onehot, p = cache[5:]
            g = dx[:, :, None] * self.centers[None, None, :]
            if donehot is not None:
                g = g + donehot
            do = straight_through_backward(p, g).reshape(len(h), -1)
        G["dec3_W"] += d2.T @ do
        G["dec3_b"] += do.sum(0)
        dd2 = do @ P["dec3_W"].T
        da2 = dd2 * _elu_grad(a2, d2)
        G["dec2_W"] += d1.T @ da2
        G["dec2_b"] += da2.sum(0)
        dd1 = da2 @ P["dec2_W"].T
        da1 = dd1 * _elu_grad(a1, d1)
        G["dec1_W"] += h.T @ da1
        G["dec1_b"] += da1.sum(0)
        return da1 @ P["dec1_W"].T

    def embed_backward(self, onehot, dfeat, G):
        """Gradient w.r.t. the embedding weights; returns d(onehot)."""
        if self.C is None:
            return None
        G["emb_W"] += onehot.sum(axis=1).T @ dfeat
        G["emb_b"] += onehot.shape[1] * dfeat.sum(0)
        return np.broadcast_to((dfeat @ self.P["emb_W"].T)[:, None, :], onehot.shape)


def policy_step(params: PolicyParams, hidden_state, x_prev, y_prev):
    """One recurrent step ``(h, x_prev, y_prev) -> (x_next, h')``.

    Accepts a single point or a batch (leading axis).
    """
    net = _Net(params)
    x = np.asarray(x_prev, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    y = np.atleast_1d(np.asarray(y_prev, dtype=float))
    h = np.atleast_2d(np.asarray(hidden_state, dtype=float))
    feat, _ = net.embed(x)
    u, _ = net.encode(feat, y)
    gx = u @ net.P["gru_Wx"] + net.P["gru_b"]
    h_new, _ = net.gru(gx, h)
    x_next, _ = net.decode(h_new)
    if single:
        return x_next[0], h_new[0]
    return x_next, h_new


def zero_hidden(params: PolicyParams, batch: int | None = None) -> np.ndarray:
    if batch is None:
        return np.zeros(params.hidden)
    return np.zeros((batch, params.hidden))


# ---------------------------------------------------------------------------
# Rollout and reverse pass
# ---------------------------------------------------------------------------


@dataclass
class RolloutResult:
    lookahead_x: np.ndarray  # (r, L, dim)
    lookahead_y: np.ndarray  # (r, L)
    actions: np.ndarray  # (r, dim)
    step_costs: np.ndarray  # (r, L + 1)
    per_path: np.ndarray  # (r,)
    objective: float
    tape: dict = field(default=None, repr=False)

    @property
    def n_trajectories(self) -> int:
        return self.actions.shape[0]

    @property
    def query(self) -> np.ndarray:
        """The first decision of the rollout (shared across paths)."""
        if self.lookahead_x.shape[1] > 0:
            return self.lookahead_x[0, 0]
        return self.actions[0]


def rollout(params: PolicyParams, batch: PathBatch, data, L: int, cost: CostModel,
            trajectory=None, lam: float | None = None, loss_weight: float = 1.0,
            first_query=None, free_actions=None, project: bool = False) -> RolloutResult:
    """Unroll the policy on every posterior path.

    The hidden state is primed on the observed history (its last point is the
    current position), then the policy proposes ``x_{t+1}``. Each path
    ``tau`` answers with ``y = f_tau(x)`` and the policy continues for ``L``
    steps; the output after the last lookahead step is the action ``a_tau``.
    The objective is the path average of ``-loss_weight * f_tau(a_tau) +
    lam * cost(current -> x_{t+1} -> ... -> a_tau)``.

    ``first_query`` overrides ``x_{t+1}`` (no gradient flows to it).
    ``free_actions`` (r, dim) are logits of per-path actions replacing the
    action head. With ``project`` (spotlight costs) every emitted point of a
    continuous head is radially shrunk onto the spotlight ball around its
    predecessor, so rollouts are feasible by construction; a discrete head
    only chooses cells within ``r`` of its predecessor in every coordinate.
    """
    net = _Net(params)
    lam = cost.lam if lam is None else lam
    X = np.asarray(data.points, dtype=float)
    Y = np.asarray(data.observations, dtype=float)
    r = batch.n_paths
    dim = X.shape[1]
    current = X[-1] if trajectory is None else np.atleast_2d(np.asarray(trajectory, dtype=float))[-1]
    spent0 = 0.0 if trajectory is None else sunk_markov(cost, trajectory)

    # warm start on the observed history (batch of one)
    feat, hist_onehot = net.embed(X)
    U, enc_cache = net.encode(feat, Y)
    GX = U @ net.P["gru_Wx"] + net.P["gru_b"]
    h = np.zeros((1, net.H))
    warm = []
    for i in range(len(X)):
        h, c = net.gru(GX[i:i + 1], h)
        warm.append(c)
    spot = bool(project) and cost.kind == "spotlight"
    project = spot and net.C is None
    # discrete heads cannot be projected; they pick among reachable cells instead
    reach = cost.r if spot and net.C is not None else None
    # a hair inside the ball keeps the soft penalty off its kink
    radius = cost.r * (1.0 - 1e-9)
    x0, dec0 = net.decode(h, current[None, :], reach)
    proj0 = None
    if project:
        x0, proj0 = soft_project(current[None, :], x0, radius, cost.p)
    if first_query is not None:
        x0 = np.asarray(first_query, dtype=float).reshape(1, dim)
        dec0 = proj0 = None

    steps = []
    xs, ys = [], []
    free_raw = proj_free = None
    x = np.repeat(x0, r, axis=0)
    hb = np.repeat(h, r, axis=0)
    prev = np.repeat(current[None, :], r, axis=0)
    spent = np.full(r, spent0)
    costs, cost_grads = [], []
    for _ in range(L):
        c, markov, dc = soft_step_cost(cost, prev, x, spent)
        spent = spent + markov
        costs.append(c)
        cost_grads.append(dc)
        y, dy_dx = eval_paths(batch, x, grad=True)
        xs.append(x)
        ys.append(y)
        feat_l, onehot_l = net.embed(x)
        u_l, enc_c = net.encode(feat_l, y)
        gx = u_l @ net.P["gru_Wx"] + net.P["gru_b"]
        h_prev = hb
        hb, gru_c = net.gru(gx, hb)
        x_next, dec_c = net.decode(hb, x, reach)
        proj_c = None
        if project:
            x_next, proj_c = soft_project(x, x_next, radius, cost.p)
        steps.append(dict(dy_dx=dy_dx, onehot=onehot_l, enc=enc_c, u=u_l, gru=gru_c, dec=dec_c, h_prev=h_prev,
                          proj=proj_c))
        prev = x
        x = x_next
    if free_actions is not None:
        if net.C is not None:
            raise ValueError("free actions are only supported for continuous heads")
        x = _squash(np.asarray(free_actions, dtype=float))
        free_raw = x
        if project:
            x, proj_free = soft_project(prev, x, radius, cost.p)
    actions = x
    c, _, dc = soft_step_cost(cost, prev, actions, spent)
    costs.append(c)
    cost_grads.append(dc)
    fa, dfa = eval_paths(batch, actions, grad=True)
    step_costs = np.stack(costs, axis=1)
    per_path = -loss_weight * fa + lam * step_costs.sum(axis=1)
    objective = float(np.mean(per_path))

    tape = dict(
        net=net, enc_cache=enc_cache, hist_onehot=hist_onehot, warm=warm, dec0=dec0, U=U,
        steps=steps, cost_grads=cost_grads, dfa=dfa, lam=lam, loss_weight=loss_weight,
        r=r, L=L, free_actions=free_actions, actions=actions, proj0=proj0,
        free_raw=free_raw, proj_free=proj_free,
    )
    lx = np.stack(xs, axis=1) if xs else np.zeros((r, 0, dim))
    ly = np.stack(ys, axis=1) if ys else np.zeros((r, 0))
    return RolloutResult(lx, ly, actions, step_costs, per_path, objective, tape)


def backward(result: RolloutResult, params: PolicyParams, return_free: bool = False):
    """Exact gradient of ``result.objective`` with respect to ``params.flat``.

    With ``return_free`` also returns the gradient w.r.t. the free action logits.
    """
    T = result.tape
    net: _Net = T["net"]
    grad_flat = np.zeros_like(params.flat)
    G = unpack(grad_flat, params.layout)
    r, L, lam, w = T["r"], T["L"], T["lam"], T["loss_weight"]
    steps, cgrads = T["steps"], T["cost_grads"]

    # d objective / d action
    dx = (-w * T["dfa"] + lam * cgrads[L]) / r
    dprev = -lam * cgrads[L] / r  # flows into x_{t+L} (or nothing when L == 0)
    d_free = None
    if T["free_actions"] is not None:
        if T["proj_free"] is not None:
            dx, g_prev = soft_project_backward(T["proj_free"], dx)
            dprev = dprev + g_prev
        a = T["free_raw"]
        d_free = dx * a * (1.0 - a)
        dx = np.zeros_like(dx)
    dh = np.zeros((r, net.H))
    donehot_next = None
    gru_caches, gru_dgx = [], []
    for l in range(L - 1, -1, -1):
        s = steps[l]
        # x emitted by step l (x_{t+l+2} or the action) came from the decoder
        if T["free_actions"] is None or l < L - 1:
            if s["proj"] is not None:
                dx, g_prev = soft_project_backward(s["proj"], dx)
                dprev = dprev + g_prev
            dh = dh + net.decode_backward(s["dec"], dx, G, donehot_next)
        dgx, dh_prev = net.gru_backward(s["gru"], dh)
        gru_caches.append(s["gru"])
        gru_dgx.append(dgx)
        G["gru_Wx"] += s["u"].T @ dgx
        G["gru_b"] += dgx.sum(0)
        du = dgx @ net.P["gru_Wx"].T
        dfeat, dy = net.encode_backward(s["enc"], du, G)
        # x_{t+l+1}: input to step l, the path evaluation, and two cost terms
        dx_l = dy[:, None] * s["dy_dx"] + lam * cgrads[l] / r + dprev
        if net.C is None:
            dx_l = dx_l + dfeat
            donehot_next = None
        else:
            donehot_next = net.embed_backward(s["onehot"], dfeat, G)
        dprev = -lam * cgrads[l] / r
        dx = dx_l
        dh = dh_prev

    # first query: shared across paths
    dh0 = dh.sum(axis=0, keepdims=True)
    if T["dec0"] is not None:
        dx0 = dx.sum(axis=0, keepdims=True)
        if T["proj0"] is not None:
            dx0 = soft_project_backward(T["proj0"], dx0)[0]
        dn1 = None if donehot_next is None else donehot_next.sum(axis=0, keepdims=True)
        dh0 = dh0 + net.decode_backward(T["dec0"], dx0, G, dn1)

    # warm start
    warm = T["warm"]
    n_hist = len(warm)
    dGX = np.zeros((n_hist, 3 * net.H))
    for i in range(n_hist - 1, -1, -1):
        dgx, dh0 = net.gru_backward(warm[i], dh0)
        dGX[i] = dgx[0]
    net.gru_weight_grads(gru_caches + warm, gru_dgx + [dGX], G)
    G["gru_Wx"] += T["U"].T @ dGX
    G["gru_b"] += dGX.sum(0)
    dU = dGX @ net.P["gru_Wx"].T
    dfeat, _ = net.encode_backward(T["enc_cache"], dU, G)
    if net.C is not None:
        net.embed_backward(T["hist_onehot"], dfeat, G)
    if return_free:
        return grad_flat, d_free
    return grad_flat


def objective_and_grad(params: PolicyParams, batch: PathBatch, data, L: int, cost: CostModel, **kw):
    res = rollout(params, batch, data, L, cost, **kw)
    return res.objective, backward(res, params), res


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n: int, lr: float = 1e-3) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState):
    """One Adam update; returns ``(new_params, new_state)`` without mutating inputs."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grads
    v = state.beta2 * state.v + (1 - state.beta2) * grads * grads
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps)


# ---------------------------------------------------------------------------
# von Mises-Fisher exploration noise
# ---------------------------------------------------------------------------


def sample_vmf_direction(mean_dir, kappa: float, rng: np.random.Generator) -> np.ndarray:
    """Unit vector from vMF(mean_dir, kappa) via Wood's rejection sampler."""
    mu = np.asarray(mean_dir, dtype=float)
    dim = mu.size
    if dim == 1:
        if kappa == 0:
            return np.array([1.0 if rng.random() < 0.5 else -1.0])
        p_pos = 1.0 / (1.0 + np.exp(-2.0 * kappa * mu[0]))
        return np.array([1.0 if rng.random() < p_pos else -1.0])
    if kappa == 0:
        v = rng.standard_normal(dim)
        return v / np.linalg.norm(v)
    mu = mu / np.linalg.norm(mu)
    b = (dim - 1) / (2.0 * kappa + np.sqrt(4.0 * kappa**2 + (dim - 1) ** 2))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + (dim - 1) * np.log(1.0 - x0 * x0)
    while True:
        z = rng.beta((dim - 1) / 2.0, (dim - 1) / 2.0)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        if kappa * w + (dim - 1) * np.log(1.0 - x0 * w) - c >= np.log(rng.random()):
            break
    v = rng.standard_normal(dim)
    v -= (v @ mu) * mu
    v /= np.linalg.norm(v)
    return w * mu + np.sqrt(max(1.0 - w * w, 0.0)) * v


def vmf_perturb(x, kappa: float, magnitude: float, stream: SeedStream | np.random.Generator,
                mean_dir=None) -> np.ndarray:
    """Move ``x`` by ``magnitude`` along a vMF direction and clamp to the unit box.

    ``mean_dir`` is the current step displacement; when it is missing or zero
    the direction is uniform.
    """
    x = np.asarray(x, dtype=float)
    if magnitude == 0:
        return x.copy()
    rng = stream.generator() if isinstance(stream, SeedStream) else stream
    if mean_dir is None or not np.any(np.asarray(mean_dir) != 0):
        kappa = 0.0
        mean_dir = np.ones_like(x)
    u = sample_vmf_direction(mean_dir, kappa, rng)
    return np.clip(x + magnitude * u, 0.0, 1.0)
