"""Belief-state dynamic programming and the equilibrium iteration.

The full hyperparameter state is compressed to a tensor-product grid over
(inventory, demand-intercept posterior mean, rival high-cost probability);
the remaining hyperparameters are frozen at configured values. Transition
expectations use Gauss-Hermite quadrature over demand noise, so the Bellman
operator is deterministic and the discount-factor contraction can be checked
numerically. Posterior updates after a simulated transition are projected to
the nearest grid node (ties to the lower node).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .learning import PosteriorHyper, conjugate_update
from .market import FirmType

__all__ = [
    "EquilibriumConfig",
    "EquilibriumModel",
    "BeliefGrid",
    "ValueFunction",
    "GridPolicy",
    "IterationDiagnostics",
    "DiscretizedDynamics",
    "NonConvergenceError",
    "build_belief_grid",
    "build_dynamics",
    "bellman_core",
    "bellman_apply",
    "value_iterate",
    "equilibrium_iteration",
    "contraction_check",
    "myopic_policy",
]


class NonConvergenceError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class EquilibriumConfig:
    inventory_axis: tuple
    intercept_axis: tuple
    belief_axis: tuple
    price_grid: tuple
    quantity_grid: tuple
    delta: float = 0.98
    kappa: float = 0.6
    quad_points: int = 8
    tol: float = 1e-6
    max_iter: int = 5000
    sweep_cap: int = 25
    node_budget: int = 50_000
    refresh_trajectories: int = 0
    refresh_horizon: int = 10

    def __post_init__(self):
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("discount factor must lie in [0, 1)")
        for name in ("inventory_axis", "intercept_axis", "belief_axis"):
            axis = np.asarray(getattr(self, name), dtype=float)
            if axis.size < 2:
                raise ValueError(f"{name} needs at least 2 points")
            if np.any(np.diff(axis) <= 0):
                raise ValueError(f"{name} must be strictly increasing")


@dataclass
class EquilibriumModel:
    """Frozen economic primitives the grid game is built from."""

    firm_types: tuple           # actual FirmType per firm
    rival_types: tuple          # (low-cost FirmType, high-cost FirmType)
    hyper: PosteriorHyper       # frozen posterior; intercept mean varies per node
    salvage_on: bool = True

    def sigma(self) -> float:
        return self.hyper.noise_sd()


@dataclass
class BeliefGrid:
    inv_axis: np.ndarray
    m0_axis: np.ndarray
    mu_axis: np.ndarray
    nodes: np.ndarray  # (N, 3) columns: inventory, intercept mean, P(rival high-cost)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]


@dataclass
class ValueFunction:
    values: np.ndarray


@dataclass
class GridPolicy:
    """Per-node flat action index into the price-major action grid."""

    actions: np.ndarray

    def as_tuples(self, config: EquilibriumConfig):
        n_q = len(config.quantity_grid)
        return [(config.price_grid[a // n_q], config.quantity_grid[a % n_q])
                for a in self.actions]


@dataclass
class IterationDiagnostics:
    sup_norm_deltas: list = field(default_factory=list)
    policy_change_counts: list = field(default_factory=list)
    converged: bool = False


@dataclass
class DiscretizedDynamics:
    """Deterministic finite game seen by one firm given the rival's policy.

    reward: (N, A); next_idx: (N, A, B, K) node indices over rival-type
    branches B and quadrature nodes K; type_probs: (N, B); quad_weights: (K,).
    """

    reward: np.ndarray
    next_idx: np.ndarray
    type_probs: np.ndarray
    quad_weights: np.ndarray


def build_belief_grid(config: EquilibriumConfig) -> BeliefGrid:
    inv = np.asarray(config.inventory_axis, dtype=float)
    m0 = np.asarray(config.intercept_axis, dtype=float)
    mu = np.asarray(config.belief_axis, dtype=float)
    if np.any(mu < 0) or np.any(mu > 1):
        raise ValueError("belief axis entries must lie in [0, 1]")
    count = inv.size * m0.size * mu.size
    if count > config.node_budget:
        raise ValueError(
            f"grid would have {count} nodes, above the budget of "
            f"{config.node_budget}; reduce per-axis resolutions")
    grids = np.meshgrid(inv, m0, mu, indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in grids], axis=1)
    return BeliefGrid(inv, m0, mu, nodes)


def _project(axis: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Nearest-node projection with ties resolved to the lower node."""
    idx = np.searchsorted(axis, values)
    idx = np.clip(idx, 1, axis.size - 1)
    lower = axis[idx - 1]
    upper = axis[idx]
    choose_upper = (values - lower) > (upper - values)
    return np.where(choose_upper, idx, idx - 1)


def _hermite_rule(k: int):
    """Nodes/weights for E[f(Z)], Z standard normal."""
    x, w = np.polynomial.hermite.hermgauss(k)
    return x * np.sqrt(2.0), w / np.sqrt(np.pi)


def build_dynamics(grid: BeliefGrid, config: EquilibriumConfig,
                   model: EquilibriumModel, firm_type: FirmType,
                   rival_policies: tuple) -> DiscretizedDynamics:
    """Precompute rewards and projected transitions for one firm.

    ``rival_policies`` holds one GridPolicy per hypothesized rival type
    (low, high); the rival is assumed to act from the mirrored node. Rewards
    are credible-risk scores over the joint (rival type, demand noise)
    mixture; the type-belief transition follows Bayes' rule against the
    rival's deterministic per-type policies.
    """
    prices = np.asarray(config.price_grid, dtype=float)
    quants = np.asarray(config.quantity_grid, dtype=float)
    n_q = quants.size
    n_act = prices.size * n_q
    zq, wq = _hermite_rule(config.quad_points)
    k_q = zq.size
    n_nodes = grid.n_nodes
    n_types = len(rival_policies)
    sigma = model.sigma()

    inv = grid.nodes[:, 0]
    m0 = grid.nodes[:, 1]
    mu_hi = grid.nodes[:, 2]
    type_probs = np.stack([1.0 - mu_hi, mu_hi], axis=1)[:, :n_types]
    if n_types == 1:
        type_probs = np.ones((n_nodes, 1))

    coef = model.hyper.m
    reward = np.empty((n_nodes, n_act))
    next_idx = np.empty((n_nodes, n_act, n_types, k_q), dtype=np.int64)

    rival_actions = np.stack([pol.actions for pol in rival_policies], axis=1)  # (N, B)
    rp_all = prices[rival_actions // n_q]  # (N, B) rival price per node/type

    net_hold = firm_type.h - (firm_type.s if model.salvage_on else 0.0)

    for ia in range(n_act):
        p = prices[ia // n_q]
        q = quants[ia % n_q]
        stock = inv + q
        # branch over rival type: rival price differs, so demand mean differs
        prof_branches = np.empty((n_nodes, n_types, k_q))
        for b in range(n_types):
            rp = rp_all[:, b]
            x_mean = m0 + coef[1] * p + coef[2] * rp  # lagged rival stockout frozen at 0
            # predictive sd includes frozen coefficient uncertainty
            x_cov = np.stack([np.ones(n_nodes), np.full(n_nodes, p), rp,
                              np.zeros(n_nodes)], axis=1)
            quad_form = np.einsum("ni,ij,nj->n", x_cov, model.hyper.S, x_cov)
            sd_pred = sigma * np.sqrt(1.0 + quad_form)
            demand = x_mean[:, None] + sd_pred[:, None] * zq[None, :]  # (N, K)
            sales = np.clip(demand, 0.0, stock[:, None])
            left = stock[:, None] - sales
            prof_branches[:, b, :] = p * sales - firm_type.c * q - net_hold * left

            # transitions: inventory, intercept-mean update, belief update
            resid = demand - x_mean[:, None]
            Sx = x_cov @ model.hyper.S
            gains = Sx[:, 0] / (1.0 + quad_form)
            m0_next = m0[:, None] + gains[:, None] * resid
            i_inv = _project(grid.inv_axis, left)
            i_m0 = _project(grid.m0_axis, m0_next)
            # belief after observing the rival action of type b
            if n_types == 2:
                a_low = rival_actions[:, 0]
                a_high = rival_actions[:, 1]
                separating = a_low != a_high
                mu_next = np.where(separating, 1.0 if b == 1 else 0.0, mu_hi)
            else:
                mu_next = mu_hi
            i_mu = _project(grid.mu_axis, mu_next)
            next_idx[:, ia, b, :] = (
                (i_inv * grid.m0_axis.size + i_m0) * grid.mu_axis.size
                + i_mu[:, None])

        w_joint = type_probs[:, :, None] * wq[None, None, :]  # (N, B, K)
        mean = (w_joint * prof_branches).sum(axis=(1, 2))
        var = (w_joint * (prof_branches - mean[:, None, None]) ** 2).sum(axis=(1, 2))
        reward[:, ia] = mean - config.kappa * np.sqrt(np.maximum(var, 0.0))

    return DiscretizedDynamics(reward, next_idx, type_probs, wq)


def bellman_core(values: np.ndarray, dyn: DiscretizedDynamics,
                 delta: float) -> tuple[np.ndarray, np.ndarray]:
    """One deterministic Bellman sweep; returns (new values, greedy policy)."""
    cont = values[dyn.next_idx] @ dyn.quad_weights          # (N, A, B)
    cont = np.einsum("nab,nb->na", cont, dyn.type_probs)    # (N, A)
    q_vals = dyn.reward + delta * cont
    greedy = q_vals.argmax(axis=1)
    return q_vals.max(axis=1), greedy


def bellman_apply(value: ValueFunction, rival_policy, grid: BeliefGrid,
                  config: EquilibriumConfig, model: EquilibriumModel,
                  firm_type: FirmType | None = None) -> tuple[ValueFunction, GridPolicy]:
    """One application of the credible-risk Bellman operator."""
    firm_type = firm_type or model.firm_types[0]
    dyn = build_dynamics(grid, config, model, firm_type, _as_policy_pair(rival_policy))
    new_vals, greedy = bellman_core(value.values, dyn, config.delta)
    return ValueFunction(new_vals), GridPolicy(greedy)


def _as_policy_pair(rival_policy):
    if isinstance(rival_policy, GridPolicy):
        return (rival_policy, rival_policy)
    return tuple(rival_policy)


def value_iterate(grid: BeliefGrid, rival_policy, config: EquilibriumConfig,
                  model: EquilibriumModel, firm_type: FirmType | None = None,
                  initial: np.ndarray | None = None,
                  dyn: DiscretizedDynamics | None = None
                  ) -> tuple[ValueFunction, GridPolicy, IterationDiagnostics]:
    """Iterate the Bellman operator to its fixed point (sup-norm tolerance)."""
    firm_type = firm_type or model.firm_types[0]
    if dyn is None:
        dyn = build_dynamics(grid, config, model, firm_type,
                             _as_policy_pair(rival_policy))
    values = np.zeros(grid.n_nodes) if initial is None else np.asarray(initial, float).copy()
    diag = IterationDiagnostics()
    policy = np.zeros(grid.n_nodes, dtype=np.int64)
    for _ in range(config.max_iter):
        new_vals, new_policy = bellman_core(values, dyn, config.delta)
        delta_sup = float(np.max(np.abs(new_vals - values)))
        diag.sup_norm_deltas.append(delta_sup)
        diag.policy_change_counts.append(int(np.count_nonzero(new_policy != policy)))
        values, policy = new_vals, new_policy
        if delta_sup < config.tol:
            diag.converged = True
            return ValueFunction(values), GridPolicy(policy), diag
    raise NonConvergenceError(
        f"value iteration did not reach tol={config.tol} in {config.max_iter} sweeps",
        diag)


def myopic_policy(grid: BeliefGrid, rival_policy, config: EquilibriumConfig,
                  model: EquilibriumModel,
                  firm_type: FirmType | None = None) -> GridPolicy:
    """Greedy one-step credible-risk policy (no continuation term)."""
    firm_type = firm_type or model.firm_types[0]
    dyn = build_dynamics(grid, config, model, firm_type, _as_policy_pair(rival_policy))
    return GridPolicy(dyn.reward.argmax(axis=1))


def equilibrium_iteration(config: EquilibriumConfig, model: EquilibriumModel,
                          rng: np.random.Generator | None = None
                          ) -> tuple[tuple, IterationDiagnostics]:
    """Alternating best responses over per-(firm, type) grid policies.

    Returns ((firm1 policies per type, firm2 policies per type), diagnostics).
    Policy cycling beyond the sweep cap returns the best-so-far pair with
    ``converged=False`` instead of raising.
    """
    grid = build_belief_grid(config)
    n_types = len(model.rival_types)
    mid = (len(config.price_grid) - 1) // 2 * len(config.quantity_grid) \
        + (len(config.quantity_grid) - 1) // 2
    policies = [[GridPolicy(np.full(grid.n_nodes, mid, dtype=np.int64))
                 for _ in range(n_types)] for _ in (0, 1)]
    diag = IterationDiagnostics()
    hyper0 = model.hyper

    for sweep in range(config.sweep_cap):
        changes = 0
        sup_delta = 0.0
        for firm in (0, 1):
            rival = 1 - firm
            for k, own_type in enumerate(model.rival_types):
                _, new_pol, vi_diag = value_iterate(
                    grid, tuple(policies[rival]), config, model, firm_type=own_type)
                changes += int(np.count_nonzero(
                    new_pol.actions != policies[firm][k].actions))
                sup_delta = max(sup_delta, vi_diag.sup_norm_deltas[-1])
                policies[firm][k] = new_pol
        diag.policy_change_counts.append(changes)
        diag.sup_norm_deltas.append(sup_delta)
        if changes == 0:
            diag.converged = True
            break
        if config.refresh_trajectories > 0 and rng is not None:
            model = _refresh_hyper(grid, config, model, policies, rng)
    else:
        model = EquilibriumModel(model.firm_types, model.rival_types, hyper0,
                                 model.salvage_on)
    return (tuple(policies[0]), tuple(policies[1])), diag


def _refresh_hyper(grid: BeliefGrid, config: EquilibriumConfig,
                   model: EquilibriumModel, policies, rng) -> EquilibriumModel:
    """Simulate short play paths and refreeze the grid's hyperparameters.

    Trajectories are generated from the current greedy policies with the
    node posterior mean as ground truth; the posterior after
    ``refresh_horizon`` observations (averaged over trajectories) replaces
    the frozen scale/shape/rate and non-intercept means.
    """
    prices = np.asarray(config.price_grid, dtype=float)
    quants = np.asarray(config.quantity_grid, dtype=float)
    n_q = quants.size
    sigma = model.sigma()
    acc_S = np.zeros_like(model.hyper.S)
    acc_m = np.zeros_like(model.hyper.m)
    acc_a = 0.0
    acc_b = 0.0
    for _ in range(config.refresh_trajectories):
        hyper = model.hyper.copy()
        node = int(rng.integers(grid.n_nodes))
        for _ in range(config.refresh_horizon):
            a0 = policies[0][0].actions[node]
            a1 = policies[1][0].actions[node]
            p_own, q_own = prices[a0 // n_q], quants[a0 % n_q]
            p_riv = prices[a1 // n_q]
            x = np.array([1.0, p_own, p_riv, 0.0])
            demand = float(x @ hyper.m) + sigma * rng.standard_normal()
            hyper = conjugate_update(hyper, x, demand)
            inv_next = max(grid.nodes[node, 0] + q_own - max(demand, 0.0), 0.0)
            i_inv = int(_project(grid.inv_axis, np.array([inv_next]))[0])
            i_m0 = int(_project(grid.m0_axis, np.array([hyper.m[0]]))[0])
            i_mu = int(_project(grid.mu_axis, np.array([grid.nodes[node, 2]]))[0])
            node = (i_inv * grid.m0_axis.size + i_m0) * grid.mu_axis.size + i_mu
        acc_S += hyper.S
        acc_m += hyper.m
        acc_a += hyper.a
        acc_b += hyper.b
    k = config.refresh_trajectories
    new_hyper = PosteriorHyper(acc_m / k, acc_S / k, acc_a / k, acc_b / k)
    return EquilibriumModel(model.firm_types, model.rival_types, new_hyper,
                            model.salvage_on)


def contraction_check(grid: BeliefGrid, model: EquilibriumModel, rival_policy,
                      trials: int, rng: np.random.Generator,
                      config: EquilibriumConfig,
                      firm_type: FirmType | None = None) -> dict:
    """Verify sup-norm contraction with modulus delta on random value pairs."""
    firm_type = firm_type or model.firm_types[0]
    dyn = build_dynamics(grid, config, model, firm_type,
                         _as_policy_pair(rival_policy))
    r_max = float(np.max(np.abs(dyn.reward)))
    bound = r_max / (1.0 - config.delta) if config.delta < 1 else r_max
    max_ratio = 0.0
    violations = []
    for t in range(trials):
        v = rng.uniform(-bound, bound, size=grid.n_nodes)
        w = rng.uniform(-bound, bound, size=grid.n_nodes)
        tv, _ = bellman_core(v, dyn, config.delta)
        tw, _ = bellman_core(w, dyn, config.delta)
        lhs = float(np.max(np.abs(tv - tw)))
        rhs = config.delta * float(np.max(np.abs(v - w)))
        if lhs > rhs + 1e-9:
            violations.append({"trial": t, "lhs": lhs, "rhs": rhs})
        if rhs > 0:
            max_ratio = max(max_ratio, lhs / float(np.max(np.abs(v - w))))
    return {
        "trials": trials,
        "delta": config.delta,
        "max_ratio": max_ratio,
        "violations": violations,
        "passed": not violations,
    }
