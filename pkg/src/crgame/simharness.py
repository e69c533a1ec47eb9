"""Monte Carlo experiment runner: replications, summaries, bootstrap.

Each replication is a pure function of (master seed, policy, replication
index) through counter-based streams, so any subset of replications, any
thread count, and repeated runs all reproduce identically.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .learning import (ObservationRecord, PosteriorHyper, TypeBelief,
                       online_update, posterior_mse, update_type_belief)
from .market import (SALVAGE_MODES, Action, DemandParams, FirmType,
                     MarketState, simulate_period)
from .policy import (POLICIES, BeliefState, PolicyConfig,
                     _closed_form_grid_scores, select_action)

__all__ = [
    "SimConfig",
    "ReplicationRecord",
    "ExperimentSummary",
    "BootstrapReport",
    "run_replication",
    "run_experiment",
    "bootstrap_diff",
    "dominance_curve",
    "relative_improvement",
    "summarize_relative",
]

_POLICY_ID = {name: i for i, name in enumerate(POLICIES)}


@dataclass
class SimConfig:
    horizon: int = 30
    replications: int = 150
    delta: float = 0.98
    true_params: DemandParams = field(
        default_factory=lambda: DemandParams(45.0, -3.6, 1.2, 7.5, 4.5))
    cost_low: float = 6.0
    cost_high: float = 10.0
    high_cost_prob: tuple = (0.5, 0.5)
    holding: float = 0.8
    salvage: float = 1.5
    price_grid: tuple = tuple(float(p) for p in range(8, 17))
    quantity_grid: tuple = tuple(float(q) for q in range(20, 70, 5))
    prior_mean: tuple = (35.0, -2.0, 0.5, 3.0)
    prior_sd: tuple = (10.0, 2.0, 2.0, 4.0)
    prior_a: float = 3.0
    prior_b: float = 40.5
    kappa: float = 0.6
    predictive_samples: int = 500
    master_seed: int = 20240
    salvage_mode: str = "per-period"
    sigma_mode: str = "fixed"
    learning_mode: str = "gibbs-every-period"
    rival_forecast: str = "last-action"
    type_likelihood_temperature: float = 1.0
    bootstrap_resamples: int = 10_000
    bootstrap_level: float = 0.95

    def __post_init__(self):
        if self.horizon < 1 or self.replications < 1:
            raise ValueError("horizon and replications must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("discount factor must lie in (0, 1)")
        if not self.cost_low < self.cost_high:
            raise ValueError("cost_low must be below cost_high")
        if self.salvage_mode not in SALVAGE_MODES:
            raise ValueError(f"salvage_mode must be one of {SALVAGE_MODES}")
        if self.sigma_mode not in ("learn", "fixed"):
            raise ValueError("sigma_mode must be 'learn' or 'fixed'")
        if self.learning_mode not in ("single-imputation", "gibbs-every-period"):
            raise ValueError("unknown learning_mode "
                             f"{self.learning_mode!r}")

    def prior_hyper(self) -> PosteriorHyper:
        return PosteriorHyper(
            np.asarray(self.prior_mean, dtype=float),
            np.diag(np.asarray(self.prior_sd, dtype=float) ** 2),
            self.prior_a, self.prior_b)

    def firm_type(self, cost: float) -> FirmType:
        return FirmType(cost, self.holding, self.salvage)

    def policy_config(self, kappa: float | None = None) -> PolicyConfig:
        return PolicyConfig(
            price_grid=self.price_grid, quantity_grid=self.quantity_grid,
            kappa=self.kappa if kappa is None else kappa,
            predictive_samples=self.predictive_samples,
            salvage_mode=self.salvage_mode, sigma_mode=self.sigma_mode,
            fixed_sigma=float(np.sqrt(self.prior_b / (self.prior_a - 1.0))),
            rival_forecast=self.rival_forecast)


@dataclass
class ReplicationRecord:
    policy: str
    rep: int
    costs: tuple
    prices: np.ndarray        # (T, 2)
    quantities: np.ndarray    # (T, 2)
    sales: np.ndarray         # (T, 2)
    stockouts: np.ndarray     # (T, 2) bool
    profits: np.ndarray       # (T, 2) undiscounted per period
    mse: np.ndarray           # (T,) shared-posterior MSE snapshot
    beliefs: np.ndarray       # (T, 2) P(rival high-cost) per firm
    firm_profit: np.ndarray   # (2,) discounted totals
    market_profit: float
    final_mse: float

    def cumulative_market_profit(self, delta: float) -> np.ndarray:
        disc = delta ** np.arange(self.profits.shape[0])
        return np.cumsum(self.profits.sum(axis=1) * disc)


@dataclass
class PolicySummary:
    policy: str
    replications: int
    mean_market_profit: float
    sd_market_profit: float
    median_market_profit: float
    mean_final_mse: float
    sd_final_mse: float
    mean_firm_profit: tuple
    curves: dict  # per-period means keyed by metric name


@dataclass
class ExperimentSummary:
    config: SimConfig
    policies: dict            # name -> PolicySummary
    records: dict             # name -> list[ReplicationRecord]
    dominance: dict           # baseline name -> per-period probability


@dataclass
class BootstrapReport:
    mean_diff_profit: float
    profit_ci: tuple
    mean_diff_mse: float
    mse_ci: tuple
    sample_mean_diff_profit: float
    sample_mean_diff_mse: float
    resamples: int
    level: float


def _rival_action_model(config: SimConfig, posterior: PosteriorHyper,
                        rival_inventory: float, own_last_price: float,
                        pcfg: PolicyConfig):
    """Likelihood of a rival action under each hypothesized rival type.

    Softmax over the rival's closed-form expected-profit grid scores,
    computed at the shared posterior mean; the rival's forecast of us is our
    last posted price.
    """
    sigma = pcfg.fixed_sigma if config.sigma_mode == "fixed" else posterior.noise_sd()
    types = (config.firm_type(config.cost_low), config.firm_type(config.cost_high))
    n_q = len(config.quantity_grid)
    tables = []
    for rtype in types:
        scores = _closed_form_grid_scores(posterior.m, sigma, pcfg,
                                          own_last_price, rtype,
                                          inventory=rival_inventory)
        logits = scores / config.type_likelihood_temperature
        logits -= logits.max()
        probs = np.exp(logits)
        tables.append(probs / probs.sum())

    def model(action: Action) -> np.ndarray:
        ip = config.price_grid.index(action.price)
        iq = config.quantity_grid.index(action.quantity)
        k = ip * n_q + iq
        return np.array([tables[0][k], tables[1][k]])

    return model


def run_replication(config: SimConfig, policy: str, rep_index: int) -> ReplicationRecord:
    """Simulate one replication of the repeated game under a single policy."""
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    pid = _POLICY_ID[policy]
    seed = config.master_seed
    static = policy == "classical-static-prior"
    kappa = config.kappa if policy == "proposed-credible-risk" else 0.0
    pcfg = config.policy_config(kappa=kappa)

    cost_rng = rngmod.stream(seed, pid, rep_index, "costs")
    costs = tuple(
        config.cost_high if cost_rng.random() < config.high_cost_prob[i]
        else config.cost_low for i in (0, 1))
    types = (config.firm_type(costs[0]), config.firm_type(costs[1]))

    posterior = config.prior_hyper()
    prior_mean = np.asarray(config.prior_mean, dtype=float)
    beliefs = [TypeBelief(np.array([1.0 - config.high_cost_prob[1 - i],
                                    config.high_cost_prob[1 - i]]))
               for i in (0, 1)]
    state = MarketState()
    last_actions: list[Action | None] = [None, None]
    history: list[ObservationRecord] = []

    T = config.horizon
    prices = np.empty((T, 2))
    quantities = np.empty((T, 2))
    sales = np.empty((T, 2))
    stockouts = np.zeros((T, 2), dtype=bool)
    profits = np.empty((T, 2))
    mse = np.empty(T)
    belief_track = np.empty((T, 2))

    for t in range(1, T + 1):
        lag_stockout = state.last_stockout
        actions = []
        for i in (0, 1):
            j = 1 - i
            bstate = BeliefState(
                inventory=state.inventory[i], own_type=types[i],
                demand_posterior=posterior, rival_type_belief=beliefs[i],
                last_rival_action=last_actions[j],
                last_rival_stockout=lag_stockout[j])
            decide_rng = rngmod.stream(seed, pid, rep_index, i, t, "decide")
            action, _ = select_action(bstate, pcfg, policy, decide_rng,
                                      static_prior_mean=prior_mean)
            actions.append(action)

        market_rng = rngmod.stream(seed, pid, rep_index, t, "market")
        outcomes, next_state = simulate_period(
            state, tuple(actions), config.true_params, types, market_rng,
            salvage_mode=config.salvage_mode, terminal=(t == T))

        if not static:
            for i in (0, 1):
                j = 1 - i
                cov = np.array([1.0, actions[i].price, actions[j].price,
                                1.0 if lag_stockout[j] else 0.0])
                stock = state.inventory[i] + actions[i].quantity
                record = ObservationRecord(
                    cov, outcomes[i].sales, stock, outcomes[i].stockout,
                    floored=(outcomes[i].sales <= 0.0
                             and not outcomes[i].stockout))
                history.append(record)
                update_rng = rngmod.stream(seed, pid, rep_index, i, t, "impute")
                posterior = online_update(
                    posterior, record, update_rng, mode=config.learning_mode,
                    prior=config.prior_hyper(), history=history,
                    noise_sd=(config.true_params.sigma
                              if config.sigma_mode == "fixed" else None))
            for i in (0, 1):
                j = 1 - i
                model = _rival_action_model(config, posterior,
                                            state.inventory[j],
                                            actions[i].price, pcfg)
                beliefs[i] = update_type_belief(beliefs[i], actions[j], model)

        for i in (0, 1):
            prices[t - 1, i] = actions[i].price
            quantities[t - 1, i] = actions[i].quantity
            sales[t - 1, i] = outcomes[i].sales
            stockouts[t - 1, i] = outcomes[i].stockout
            profits[t - 1, i] = outcomes[i].profit
            belief_track[t - 1, i] = beliefs[i].probs[1]
        mse[t - 1] = posterior_mse(posterior, config.true_params)
        last_actions = list(actions)
        state = next_state

    disc = config.delta ** np.arange(T)
    firm_profit = (profits * disc[:, None]).sum(axis=0)
    return ReplicationRecord(
        policy=policy, rep=rep_index, costs=costs, prices=prices,
        quantities=quantities, sales=sales, stockouts=stockouts,
        profits=profits, mse=mse, beliefs=belief_track,
        firm_profit=firm_profit, market_profit=float(firm_profit.sum()),
        final_mse=float(mse[-1]))


def _summarize_policy(config: SimConfig, policy: str,
                      records: list[ReplicationRecord]) -> PolicySummary:
    market = np.array([r.market_profit for r in records])
    final_mse = np.array([r.final_mse for r in records])
    firm = np.stack([r.firm_profit for r in records])
    n = len(records)
    cum = np.stack([r.cumulative_market_profit(config.delta) for r in records])
    curves = {
        "cumulative_market_profit": cum.mean(axis=0),
        "stockout_rate": np.stack([r.stockouts.mean(axis=1) for r in records]).mean(axis=0),
        "mean_price": np.stack([r.prices.mean(axis=1) for r in records]).mean(axis=0),
        "mean_quantity": np.stack([r.quantities.mean(axis=1) for r in records]).mean(axis=0),
        "posterior_mse": np.stack([r.mse for r in records]).mean(axis=0),
        "rival_high_cost_belief": np.stack([r.beliefs.mean(axis=1) for r in records]).mean(axis=0),
    }
    return PolicySummary(
        policy=policy, replications=n,
        mean_market_profit=float(market.mean()),
        sd_market_profit=float(market.std(ddof=1)) if n > 1 else 0.0,
        median_market_profit=float(np.median(market)),
        mean_final_mse=float(final_mse.mean()),
        sd_final_mse=float(final_mse.std(ddof=1)) if n > 1 else 0.0,
        mean_firm_profit=(float(firm[:, 0].mean()), float(firm[:, 1].mean())),
        curves=curves)


def run_experiment(config: SimConfig, policies: tuple = POLICIES,
                   threads: int = 1) -> ExperimentSummary:
    """Run all replications for each policy and aggregate summary statistics."""
    records: dict[str, list[ReplicationRecord]] = {}
    for policy in policies:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                recs = list(pool.map(
                    lambda r: run_replication(config, policy, r),
                    range(config.replications)))
        else:
            recs = [run_replication(config, policy, r)
                    for r in range(config.replications)]
        records[policy] = recs

    summaries = {p: _summarize_policy(config, p, records[p]) for p in policies}

    dominance = {}
    proposed = "proposed-credible-risk"
    if proposed in records:
        for baseline in policies:
            if baseline == proposed:
                continue
            dominance[baseline] = dominance_curve(records[proposed],
                                                  records[baseline],
                                                  delta=config.delta)
    return ExperimentSummary(config=config, policies=summaries,
                             records=records, dominance=dominance)


def bootstrap_diff(a, b, resamples: int = 10_000, level: float = 0.95,
                   rng: np.random.Generator | None = None,
                   a_mse=None, b_mse=None) -> BootstrapReport:
    """Percentile bootstrap for the difference in means (a - b).

    Profit vectors are required; matching final-MSE vectors are optional and
    produce the MSE comparison of the same report.
    """
    if resamples < 1:
        raise ValueError("resamples must be >= 1")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    rng = rng or np.random.default_rng(0)

    def _resample_ci(x, y):
        ix = rng.integers(0, x.size, size=(resamples, x.size))
        iy = rng.integers(0, y.size, size=(resamples, y.size))
        diffs = x[ix].mean(axis=1) - y[iy].mean(axis=1)
        lo = float(np.percentile(diffs, 100 * (1 - level) / 2))
        hi = float(np.percentile(diffs, 100 * (1 + level) / 2))
        return float(diffs.mean()), (lo, hi)

    mean_diff, profit_ci = _resample_ci(a, b)
    if a_mse is not None and b_mse is not None:
        mse_mean, mse_ci = _resample_ci(np.asarray(a_mse, dtype=float),
                                        np.asarray(b_mse, dtype=float))
        sample_mse = float(np.mean(a_mse) - np.mean(b_mse))
    else:
        mse_mean, mse_ci, sample_mse = 0.0, (0.0, 0.0), 0.0
    return BootstrapReport(
        mean_diff_profit=mean_diff, profit_ci=profit_ci,
        mean_diff_mse=mse_mean, mse_ci=mse_ci,
        sample_mean_diff_profit=float(a.mean() - b.mean()),
        sample_mean_diff_mse=sample_mse,
        resamples=resamples, level=level)


def dominance_curve(records_a: list[ReplicationRecord],
                    records_b: list[ReplicationRecord],
                    delta: float) -> np.ndarray:
    """Per-period fraction of index-matched replications where a's cumulative
    discounted market profit strictly exceeds b's."""
    if len(records_a) != len(records_b):
        raise ValueError("replication counts differ")
    cum_a = np.stack([r.cumulative_market_profit(delta) for r in records_a])
    cum_b = np.stack([r.cumulative_market_profit(delta) for r in records_b])
    if cum_a.shape != cum_b.shape:
        raise ValueError("horizons differ")
    return (cum_a > cum_b).mean(axis=0)


def relative_improvement(proposed_profit: float, baseline_profit: float,
                         proposed_mse: float, baseline_mse: float) -> dict:
    """Profit gain % and MSE reduction % of proposed over one baseline."""
    if baseline_profit == 0.0:
        gain = None  # undefined; flagged for the caller
    else:
        gain = 100.0 * (proposed_profit - baseline_profit) / abs(baseline_profit)
    reduction = 100.0 * (baseline_mse - proposed_mse) / baseline_mse
    return {"profit_gain_pct": gain, "mse_reduction_pct": reduction}


def summarize_relative(summary: ExperimentSummary) -> dict:
    """Relative profit gain and MSE reduction of the proposed policy."""
    proposed = summary.policies.get("proposed-credible-risk")
    if proposed is None:
        raise ValueError("summary lacks the proposed policy")
    out = {}
    for name, base in summary.policies.items():
        if name == "proposed-credible-risk":
            continue
        out[name] = relative_improvement(
            proposed.mean_market_profit, base.mean_market_profit,
            proposed.mean_final_mse, base.mean_final_mse)
    return out
