"""Parameter estimation: vanilla and sharpness-aware EM, regularized gradient
descent, leaf updates, and regularization-weight schedules.

The sharpness-aware M-step solves, per edge, the quadratic
lambda theta^2 - F theta - mu F = 0 whose unique nonnegative root is
(F + sqrt(F^2 + 4 lambda mu F)) / (2 lambda), then projects each sum node
back onto the simplex and applies running-average smoothing.  The cubic
variant (direct trace constraint) is kept only as a root-finding oracle for
tests; it is costlier and numerically touchier, which is why training uses
the quadratic form.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.special

from .circuit import Circuit, ParamSet
from .curvature import trace_penalty_gradient
from .errors import DivergedNaN
from .evaluate import forward
from .flows import FlowTable, backward

MU_GRID = (0.01, 0.05, 0.1, 0.5, 1.0)

FIXED = "fixed"
ADAPTIVE_DOF = "adaptive_dof"
LAYER_MEAN_FLOW = "layer_mean_flow"


@dataclass
class RegularizerConfig:
    """Knobs of the sharpness-aware update.

    mu is the regularization weight (0 disables), lam the simplex multiplier
    (fixed at 1 in practice, the KKT system has no closed form for it),
    smoothing_alpha the running-average factor, and schedule one of
    fixed / adaptive_dof / layer_mean_flow.  kappa and balance_alpha only
    matter for the adaptive schedule.
    """

    mu: float = 0.0
    lam: float = 1.0
    smoothing_alpha: float = 1.0
    schedule: str = FIXED
    kappa: float = 1.05
    balance_alpha: float = 1.0

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.lam <= 0:
            raise ValueError("lambda must be > 0")
        if not 0.0 <= self.smoothing_alpha <= 1.0:
            raise ValueError("smoothing alpha must lie in [0, 1]")
        if self.kappa < 1.0:
            raise ValueError("kappa must be >= 1")
        if self.schedule not in (FIXED, ADAPTIVE_DOF, LAYER_MEAN_FLOW):
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass
class EpochRow:
    epoch: int
    train_nll: float
    valid_nll: float
    sharpness: float
    dof: float
    mu: float
    seconds: float


@dataclass
class TrainReport:
    rows: list[EpochRow] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,train_nll,valid_nll,sharpness,dof,mu,seconds\n")
            for r in self.rows:
                fh.write(
                    f"{r.epoch},{float(r.train_nll)!r},{float(r.valid_nll)!r},{float(r.sharpness)!r},"
                    f"{float(r.dof)!r},{float(r.mu)!r},{float(r.seconds)!r}\n"
                )

    @property
    def final(self) -> EpochRow:
        return self.rows[-1]

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])


# -- closed-form updates -------------------------------------------------------


def sharp_update(flow_sum, lam: float, mu) -> np.ndarray | float:
    """Unique nonnegative root of lambda t^2 - F t - mu F = 0 (elementwise).

    The discriminant F^2 + 4 lambda mu F is nonnegative whenever F, lambda,
    mu are, so the root is always real.
    """
    f = np.asarray(flow_sum, dtype=float)
    disc = f * f + 4.0 * lam * np.asarray(mu, dtype=float) * f
    if np.any(disc < 0):
        raise ValueError("negative discriminant: flow sums must be nonnegative")
    out = (f + np.sqrt(disc)) / (2.0 * lam)
    return out if out.ndim else float(out)


def cubic_update_oracle(flow_sum: float, lam: float, mu: float) -> float:
    """Positive real root of lambda t^3 - F t^2 - 2 mu F^2 = 0.

    Safeguarded Newton within a sign-change bracket, polished to an absolute
    residual of ~1e-13.  Test oracle only; training always uses sharp_update.
    """
    f = float(flow_sum)
    if f == 0.0:
        return 0.0
    if f < 0:
        raise ValueError("flow sums must be nonnegative")
    c0 = 2.0 * mu * f * f

    def poly(t):
        return lam * t**3 - f * t * t - c0

    def dpoly(t):
        return 3.0 * lam * t * t - 2.0 * f * t

    lo = 0.0
    hi = max(f / lam, c0 ** (1.0 / 3.0), 1.0)
    while poly(hi) < 0:
        hi *= 2.0
    t = hi
    for _ in range(200):
        r = poly(t)
        if r > 0:
            hi = t
        else:
            lo = t
        step = dpoly(t)
        nxt = t - r / step if step > 0 else 0.5 * (lo + hi)
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(r) < 1e-13 and abs(nxt - t) < 1e-15 * max(1.0, t):
            t = nxt
            break
        t = nxt
    return float(t)


# -- EM steps -------------------------------------------------------------------


def _edge_flow_sums(circuit: Circuit, params: ParamSet, batch: np.ndarray) -> tuple[np.ndarray, FlowTable]:
    flows = backward(circuit, params, forward(circuit, params, batch))
    return flows.edge_flow.sum(axis=0), flows


def _m_step(
    circuit: Circuit,
    params: ParamSet,
    flow_sums: np.ndarray,
    alpha: float,
    lam: float,
    mu,
) -> ParamSet:
    """Shared M-step; mu == 0 takes the plain count-normalization path so the
    degeneration to vanilla EM is exact."""
    new = params.copy()
    mu_vec = np.broadcast_to(np.asarray(mu, dtype=float), flow_sums.shape)
    regularized = bool(np.any(mu_vec > 0))
    for n in circuit.sum_nodes:
        base = circuit.sum_edge_offset[n]
        k = len(circuit.nodes[n].children)
        fs = flow_sums[base : base + k]
        total = fs.sum()
        if total <= 0.0:
            continue  # degenerate node: keep old weights
        if regularized:
            t = sharp_update(fs, lam, mu_vec[base : base + k])
            t = np.maximum(t, 1e-8)  # zero-flow edges: floor before projection
            mini = t / t.sum()
        else:
            mini = fs / total
            mini = np.maximum(mini, 1e-12)
            mini = mini / mini.sum()
        new.sum_weights[n] = (1.0 - alpha) * params.sum_weights[n] + alpha * mini
    return new


def em_step_vanilla(circuit: Circuit, params: ParamSet, batch: np.ndarray, alpha: float = 1.0) -> ParamSet:
    """One EM step on sum weights: flow-proportional M-step plus smoothing.

    Sum nodes whose children all received zero flow over the whole batch are
    left untouched.
    """
    flow_sums, _ = _edge_flow_sums(circuit, params, batch)
    return _m_step(circuit, params, flow_sums, alpha, 1.0, 0.0)


def em_step_sharp(
    circuit: Circuit,
    params: ParamSet,
    batch: np.ndarray,
    config: RegularizerConfig,
    mu_override=None,
) -> ParamSet:
    """Sharpness-aware EM step; with mu = 0 it equals em_step_vanilla exactly."""
    flow_sums, _ = _edge_flow_sums(circuit, params, batch)
    mu = config.mu if mu_override is None else mu_override
    return _m_step(circuit, params, flow_sums, config.smoothing_alpha, config.lam, mu)


def update_leaves(
    circuit: Circuit,
    params: ParamSet,
    flows: FlowTable,
    batch: np.ndarray,
    alpha: float = 1.0,
) -> ParamSet:
    """Flow-weighted maximum-likelihood refit of leaf parameters.

    Bernoulli means are clamped to [1e-6, 1 - 1e-6], Gaussian variances are
    floored at 1e-4, and leaves with zero total flow keep their parameters.
    """
    new = params.copy()
    for i, node in enumerate(circuit.nodes):
        if node.kind != "leaf":
            continue
        w = flows.node_flow[:, i]
        total = w.sum()
        if total <= 0.0:
            continue
        x = batch[:, node.leaf.variable]
        old = params.leaf_params[i]
        if node.leaf.family == "bern":
            p = np.clip((w * x).sum() / total, 1e-6, 1.0 - 1e-6)
            new.leaf_params[i] = (1.0 - alpha) * old + alpha * np.array([p])
        elif node.leaf.family == "gauss":
            mean = (w * x).sum() / total
            var = max((w * (x - mean) ** 2).sum() / total, 1e-4)
            sm = (1.0 - alpha) * old[0] + alpha * mean
            sv = (1.0 - alpha) * old[1] ** 2 + alpha * var
            new.leaf_params[i] = np.array([sm, np.sqrt(sv)])
        else:
            k = len(old)
            counts = np.array([(w * (x == j)).sum() for j in range(k)])
            probs = np.maximum(counts / total, 1e-9)
            probs = probs / probs.sum()
            mixed = (1.0 - alpha) * old + alpha * probs
            new.leaf_params[i] = mixed / mixed.sum()
    return new


# -- mu schedules ----------------------------------------------------------------


@dataclass
class ScheduleState:
    """Inputs the schedules read at an epoch boundary."""

    train_nll: float = float("nan")
    valid_nll: float = float("nan")
    g_data: float = 0.0
    g_reg: float = 0.0
    prev_mu: float | np.ndarray = 0.0
    edge_flow_sum: np.ndarray | None = None
    edge_layer: np.ndarray | None = None


def schedule_mu(state: ScheduleState, config: RegularizerConfig):
    """Resolve the regularization weight for the next epoch.

    fixed: the configured constant.  adaptive_dof: kappa^DoF * balance_alpha
    * g_data/g_reg with DoF = 100 |NLL_val - NLL_train| / |NLL_train|, falling
    back to the previous value when the regularizer gradient vanishes.
    layer_mean_flow: per-edge vector, the mean flow of each edge's layer.
    """
    if config.schedule == FIXED:
        return config.mu
    if config.schedule == ADAPTIVE_DOF:
        if state.g_reg <= 0.0 or not np.isfinite(state.g_reg):
            return state.prev_mu
        dof_pct = 100.0 * abs(state.valid_nll - state.train_nll) / abs(state.train_nll)
        return config.kappa**dof_pct * config.balance_alpha * state.g_data / state.g_reg
    flows = state.edge_flow_sum
    layers = state.edge_layer
    mu = np.empty_like(flows)
    for layer in np.unique(layers):
        sel = layers == layer
        mu[sel] = flows[sel].mean()
    return mu


# -- training loops ---------------------------------------------------------------


def _mean_nll(circuit: Circuit, params: ParamSet, data: np.ndarray) -> float:
    return float(-forward(circuit, params, data).root_log_p.mean())


def _epoch_row(circuit, params, train, valid, epoch, mu, t0) -> EpochRow:
    trace = forward(circuit, params, train)
    flows = backward(circuit, params, trace)
    g = flows.edge_flow / params.edge_vector(circuit)
    train_nll = float(-trace.root_log_p.mean())
    sharp = float(np.sum(g * g))
    valid_nll = _mean_nll(circuit, params, valid) if valid is not None else float("nan")
    dof = (valid_nll - train_nll) / abs(train_nll) if valid is not None else float("nan")
    mu_scalar = float(np.mean(mu))
    return EpochRow(epoch, train_nll, valid_nll, sharp, dof, mu_scalar, time.perf_counter() - t0)


def _adaptive_state(circuit, params, train, train_nll, valid_nll, prev_mu) -> ScheduleState:
    flows = backward(circuit, params, forward(circuit, params, train))
    theta = params.edge_vector(circuit)
    g_data = float(np.linalg.norm(flows.edge_flow.sum(axis=0) / theta))
    g_reg = float(np.linalg.norm(trace_penalty_gradient(circuit, params, train)))
    return ScheduleState(train_nll, valid_nll, g_data, g_reg, prev_mu)


def em_train(
    circuit: Circuit,
    params: ParamSet,
    train: np.ndarray,
    valid: np.ndarray | None = None,
    config: RegularizerConfig | None = None,
    epochs: int = 100,
    batch_size: int = 200,
    seed: int = 0,
    update_leaf_params: bool = True,
) -> tuple[ParamSet, TrainReport]:
    """Mini-batch EM with the sharpness-aware M-step (vanilla when mu = 0)."""
    config = config or RegularizerConfig()
    rng = np.random.default_rng(seed)
    params = params.copy()
    report = TrainReport()
    t0 = time.perf_counter()
    mu = config.mu if config.schedule != LAYER_MEAN_FLOW else np.zeros(circuit.num_sum_edges)

    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train))
        for lo in range(0, len(train), batch_size):
            batch = train[order[lo : lo + batch_size]]
            trace = forward(circuit, params, batch)
            flows = backward(circuit, params, trace)
            flow_sums = flows.edge_flow.sum(axis=0)
            if config.schedule == LAYER_MEAN_FLOW:
                mu = schedule_mu(
                    ScheduleState(edge_flow_sum=flow_sums, edge_layer=circuit.edge_layer),
                    config,
                )
            params = _m_step(circuit, params, flow_sums, config.smoothing_alpha, config.lam, mu)
            if update_leaf_params:
                params = update_leaves(circuit, params, flows, batch, config.smoothing_alpha)
        row = _epoch_row(circuit, params, train, valid, epoch, mu, t0)
        report.rows.append(row)
        if config.schedule == ADAPTIVE_DOF and valid is not None:
            state = _adaptive_state(circuit, params, train, row.train_nll, row.valid_nll, mu)
            mu = schedule_mu(state, config)
    return params, report


class Adam:
    """Adam on a flat parameter vector (paper-style defaults except lr)."""

    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return -self.lr * mhat / (np.sqrt(vhat) + self.eps)


class _Unconstrained:
    """Bijection between a ParamSet and a flat unconstrained vector.

    Sum weights become per-node logits mapped back through a softmax; leaf
    parameters use logit (Bernoulli), (mean, log sigma) (Gaussian) and log
    probabilities (categorical).
    """

    def __init__(self, circuit: Circuit, train_leaves: bool):
        self.circuit = circuit
        self.train_leaves = train_leaves
        self.leaf_ids = (
            [i for i, nd in enumerate(circuit.nodes) if nd.kind == "leaf"] if train_leaves else []
        )
        self.num_edges = circuit.num_sum_edges

    def flatten(self, params: ParamSet) -> np.ndarray:
        parts = [np.log(params.edge_vector(self.circuit))]
        for i in self.leaf_ids:
            p = params.leaf_params[i]
            fam = self.circuit.nodes[i].leaf.family
            if fam == "bern":
                q = np.clip(p[0], 1e-9, 1 - 1e-9)
                parts.append(np.array([np.log(q / (1 - q))]))
            elif fam == "gauss":
                parts.append(np.array([p[0], np.log(p[1])]))
            else:
                parts.append(np.log(np.maximum(p, 1e-12)))
        return np.concatenate(parts)

    def unflatten(self, vec: np.ndarray, params: ParamSet) -> ParamSet:
        out = params.copy()
        logits = vec[: self.num_edges]
        for n in self.circuit.sum_nodes:
            base = self.circuit.sum_edge_offset[n]
            k = len(self.circuit.nodes[n].children)
            z = logits[base : base + k]
            z = z - z.max()
            w = np.exp(z)
            w = np.maximum(w / w.sum(), 1e-12)  # weights must stay in (0, 1]
            out.sum_weights[n] = w / w.sum()
        pos = self.num_edges
        with np.errstate(over="ignore"):  # inf sigma is the divergence signal
            for i in self.leaf_ids:
                fam = self.circuit.nodes[i].leaf.family
                if fam == "bern":
                    out.leaf_params[i] = np.array([float(scipy.special.expit(vec[pos]))])
                    pos += 1
                elif fam == "gauss":
                    out.leaf_params[i] = np.array([vec[pos], np.exp(vec[pos + 1])])
                    pos += 2
                else:
                    k = len(params.leaf_params[i])
                    z = vec[pos : pos + k]
                    z = z - z.max()
                    w = np.exp(z)
                    out.leaf_params[i] = w / w.sum()
                    pos += k
        return out

    def gradient(self, params: ParamSet, raw_theta_grad: np.ndarray, flows: FlowTable, batch, nll_sign: float) -> np.ndarray:
        """Chain raw d/d theta through the softmax and append leaf gradients.

        nll_sign scales the leaf score terms (leaf gradients only arise from
        the likelihood, not the penalty).
        """
        theta = params.edge_vector(self.circuit)
        glog = np.empty_like(raw_theta_grad)
        for n in self.circuit.sum_nodes:
            base = self.circuit.sum_edge_offset[n]
            k = len(self.circuit.nodes[n].children)
            th = theta[base : base + k]
            gr = raw_theta_grad[base : base + k]
            glog[base : base + k] = th * (gr - np.dot(th, gr))
        parts = [glog]
        for i in self.leaf_ids:
            fam = self.circuit.nodes[i].leaf.family
            w = flows.node_flow[:, i]
            x = batch[:, self.circuit.nodes[i].leaf.variable]
            p = params.leaf_params[i]
            if fam == "bern":
                parts.append(np.array([nll_sign * np.sum(w * ((x > 0.5) - p[0]))]))
            elif fam == "gauss":
                z = (x - p[0]) / p[1]
                dmean = np.sum(w * z / p[1])
                dlogsd = np.sum(w * (z * z - 1.0))
                parts.append(nll_sign * np.array([dmean, dlogsd]))
            else:
                k = len(p)
                onehot = (x[:, None].astype(int) == np.arange(k)[None, :]).astype(float)
                parts.append(nll_sign * (w[:, None] * (onehot - p[None, :])).sum(axis=0))
        return np.concatenate(parts)


def sgd_train(
    circuit: Circuit,
    params: ParamSet,
    train: np.ndarray,
    valid: np.ndarray | None = None,
    config: RegularizerConfig | None = None,
    epochs: int = 200,
    batch_size: int = 200,
    lr: float = 0.1,
    seed: int = 0,
    update_leaf_params: bool = True,
) -> tuple[ParamSet, TrainReport]:
    """Adam on unconstrained logits for NLL + mu * trace penalty.

    The penalty gradient is the exact reverse-mode derivative of
    sum_x sum_e (F_e/theta_e)^2 through both evaluation passes.  Raises
    DivergedNaN (carrying the last finite parameters) if the objective leaves
    the reals.
    """
    config = config or RegularizerConfig()
    rng = np.random.default_rng(seed)
    mapper = _Unconstrained(circuit, update_leaf_params)
    vec = mapper.flatten(params)
    opt = Adam(vec.size, lr)
    report = TrainReport()
    t0 = time.perf_counter()
    mu = config.mu
    params = mapper.unflatten(vec, params)
    last_good = params.copy()

    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train))
        for lo in range(0, len(train), batch_size):
            batch = train[order[lo : lo + batch_size]]
            trace = forward(circuit, params, batch)
            if not np.all(np.isfinite(trace.root_log_p)):
                raise DivergedNaN("non-finite log-likelihood", params=last_good, report=report)
            flows = backward(circuit, params, trace)
            theta = params.edge_vector(circuit)
            raw = -flows.edge_flow.sum(axis=0) / theta  # d(NLL)/d theta
            if config.schedule == LAYER_MEAN_FLOW:
                mu = schedule_mu(
                    ScheduleState(
                        edge_flow_sum=flows.edge_flow.sum(axis=0),
                        edge_layer=circuit.edge_layer,
                    ),
                    config,
                )
            mu_arr = np.asarray(mu, dtype=float)
            if np.any(mu_arr > 0):
                weights = None if mu_arr.ndim == 0 else mu_arr
                pg = trace_penalty_gradient(
                    circuit, params, batch, trace=trace, flows=flows, edge_weights=weights
                )
                raw = raw + (float(mu_arr) if mu_arr.ndim == 0 else 1.0) * pg
            grad = mapper.gradient(params, raw, flows, batch, nll_sign=-1.0)
            vec = vec + opt.step(grad)
            params = mapper.unflatten(vec, params)
        last_good = params.copy()
        row = _epoch_row(circuit, params, train, valid, epoch, mu, t0)
        report.rows.append(row)
        if config.schedule == ADAPTIVE_DOF and valid is not None:
            state = _adaptive_state(circuit, params, train, row.train_nll, row.valid_nll, mu)
            mu = schedule_mu(state, config)
    return params, report
