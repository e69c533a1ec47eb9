"""Action selection: predictive profit moments and the credible-risk rule.

Three policies: the credible-risk learner (mean minus kappa * sd of the
posterior-predictive profit), the risk-neutral learner (kappa = 0), and the
static-prior heuristic (frozen prior-mean expected profit, no posterior
input, state-independent). All grid scoring reuses one common draw set per
decision, so selections are deterministic given (state, config, stream).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from . import kernels
from .learning import PosteriorHyper, TypeBelief
from .market import SALVAGE_MODES, Action, FirmType

__all__ = [
    "POLICIES",
    "BeliefState",
    "PolicyConfig",
    "ActionScore",
    "credible_risk_score",
    "expected_sales_closed_form",
    "expected_sales_floored",
    "expected_profit_closed_form",
    "forecast_rival_action",
    "predictive_draws",
    "predictive_profit_moments",
    "score_action_grid",
    "static_prior_scores",
    "select_action",
]

POLICIES = (
    "proposed-credible-risk",
    "bayesian-risk-neutral",
    "classical-static-prior",
)

RIVAL_FORECAST_RULES = ("last-action", "midpoint", "type-weighted")


@dataclass
class BeliefState:
    """Everything one firm conditions on when choosing an action."""

    inventory: float
    own_type: FirmType
    demand_posterior: PosteriorHyper
    rival_type_belief: TypeBelief
    last_rival_action: Action | None = None
    last_rival_stockout: bool = False


@dataclass
class PolicyConfig:
    price_grid: tuple
    quantity_grid: tuple
    kappa: float = 0.6
    predictive_samples: int = 500
    salvage_mode: str = "per-period"
    sigma_mode: str = "learn"          # "learn" draws sigma^2 ~ IG(a, b); "fixed" pins it
    fixed_sigma: float = 4.5
    rival_forecast: str = "last-action"
    rival_types: tuple = ()            # FirmType per hypothesized rival type (type-weighted rule)

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        for grid in (self.price_grid, self.quantity_grid):
            if len(grid) == 0:
                raise ValueError("action grids must be nonempty")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise ValueError("action grids must be strictly increasing")
        if self.salvage_mode not in SALVAGE_MODES:
            raise ValueError(f"unknown salvage mode {self.salvage_mode!r}")
        if self.rival_forecast not in RIVAL_FORECAST_RULES:
            raise ValueError(f"unknown rival forecast rule {self.rival_forecast!r}")


@dataclass(frozen=True)
class ActionScore:
    action: Action
    mean: float
    sd: float
    score: float


def credible_risk_score(mean: float, sd: float, kappa: float) -> float:
    """Posterior mean payoff penalized by kappa times predictive dispersion."""
    if sd < 0 or kappa < 0:
        raise ValueError("sd and kappa must be nonnegative")
    return mean - kappa * sd


def _norm_pdf(x):
    return np.exp(-0.5 * np.asarray(x) ** 2) / np.sqrt(2.0 * np.pi)


def expected_sales_closed_form(mu, sd, stock):
    """E[min(D, stock)] for D ~ Normal(mu, sd^2), without the zero floor."""
    mu = np.asarray(mu, dtype=float)
    if np.any(np.asarray(sd) <= 0):
        raise ValueError("sd must be positive")
    if np.all(np.isposinf(stock)):
        return mu if mu.ndim else float(mu)
    alpha = (stock - mu) / sd
    out = stock - ((stock - mu) * ndtr(alpha) + sd * _norm_pdf(alpha))
    return float(out) if np.ndim(out) == 0 else out


def expected_sales_floored(mu, sd, stock):
    """E[min(max(D, 0), stock)]: the closed form with the zero floor applied."""
    return expected_sales_closed_form(mu, sd, stock) - expected_sales_closed_form(mu, sd, 0.0)


def expected_profit_closed_form(demand_mean, sigma, quantity, price,
                                firm_type: FirmType, inventory: float = 0.0,
                                salvage_on: bool = True) -> float:
    """Deterministic expected one-period profit under Gaussian demand."""
    stock = inventory + quantity
    exp_sales = expected_sales_floored(demand_mean, sigma, stock)
    exp_left = stock - exp_sales
    profit = price * exp_sales - firm_type.c * quantity - firm_type.h * exp_left
    if salvage_on:
        profit += firm_type.s * exp_left
    return float(profit)


def _midpoint_action(config: PolicyConfig) -> Action:
    # ties toward the lower index
    q = config.quantity_grid[(len(config.quantity_grid) - 1) // 2]
    p = config.price_grid[(len(config.price_grid) - 1) // 2]
    return Action(quantity=float(q), price=float(p))


def forecast_rival_action(state: BeliefState, config: PolicyConfig) -> Action:
    """Predict the rival's current action.

    Default repeats the rival's last observed action (grid midpoint in the
    first period). The type-weighted rule instead picks the grid action with
    the highest belief-weighted closed-form expected profit across the
    hypothesized rival types.
    """
    if config.rival_forecast == "type-weighted" and config.rival_types:
        sigma = _point_sigma(state.demand_posterior, config)
        m = state.demand_posterior.m
        own_last = _midpoint_action(config)  # the rival's view of us, absent history
        total = None
        for w, rtype in zip(state.rival_type_belief.probs, config.rival_types):
            scores = _closed_form_grid_scores(m, sigma, config, own_last.price, rtype)
            total = w * scores if total is None else total + w * scores
        k = int(np.argmax(total))
        return _grid_action(config, k)
    if config.rival_forecast == "last-action" and state.last_rival_action is not None:
        return state.last_rival_action
    return _midpoint_action(config)


def _grid_action(config: PolicyConfig, flat_index: int) -> Action:
    n_q = len(config.quantity_grid)
    return Action(quantity=float(config.quantity_grid[flat_index % n_q]),
                  price=float(config.price_grid[flat_index // n_q]))


def _point_sigma(hyper: PosteriorHyper, config: PolicyConfig) -> float:
    return config.fixed_sigma if config.sigma_mode == "fixed" else hyper.noise_sd()


def _closed_form_grid_scores(coef_mean, sigma, config: PolicyConfig,
                             rival_price: float, firm_type: FirmType,
                             inventory: float = 0.0,
                             rival_stockout: bool = False) -> np.ndarray:
    """Expected profit per grid action at point coefficients (price-major)."""
    salvage_on = config.salvage_mode == "per-period"
    scores = np.empty(len(config.price_grid) * len(config.quantity_grid))
    k = 0
    for p in config.price_grid:
        mu = (coef_mean[0] + coef_mean[1] * p + coef_mean[2] * rival_price
              + coef_mean[3] * (1.0 if rival_stockout else 0.0))
        for q in config.quantity_grid:
            scores[k] = expected_profit_closed_form(mu, sigma, q, p, firm_type,
                                                    inventory=inventory,
                                                    salvage_on=salvage_on)
            k += 1
    return scores


def predictive_draws(hyper: PosteriorHyper, n: int, rng: np.random.Generator,
                     sigma_mode: str = "learn", fixed_sigma: float = 4.5):
    """Common draw set for one decision: coefficients, noise sd, noise z."""
    chol = np.linalg.cholesky(hyper.S)
    if sigma_mode == "fixed":
        # known-variance recursion: S is the literal coefficient covariance
        sig = np.full(n, float(fixed_sigma))
        coef = hyper.m + rng.standard_normal((n, 4)) @ chol.T
    else:
        sig = np.sqrt(hyper.b / rng.gamma(hyper.a, 1.0, size=n))
        coef = hyper.m + (rng.standard_normal((n, 4)) @ chol.T) * sig[:, None]
    z = rng.standard_normal(n)
    return coef, sig, z


def score_action_grid(state: BeliefState, rival_forecast: Action,
                      config: PolicyConfig, draws) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo profit mean/sd for every grid action under shared draws."""
    coef, sig, z = draws
    salvage_on = config.salvage_mode == "per-period"
    return kernels.profit_moments_grid(
        coef, sig, z,
        np.asarray(config.price_grid, dtype=float),
        np.asarray(config.quantity_grid, dtype=float),
        state.inventory, rival_forecast.price, state.last_rival_stockout,
        state.own_type.c, state.own_type.h, state.own_type.s, salvage_on)


def predictive_profit_moments(state: BeliefState, candidate: Action,
                              rival_forecast: Action, config: PolicyConfig,
                              rng: np.random.Generator) -> tuple[float, float]:
    """Posterior-predictive profit mean and sd for a single candidate action."""
    if config.predictive_samples < 2:
        raise ValueError("predictive_samples must be >= 2")
    draws = predictive_draws(state.demand_posterior, config.predictive_samples,
                             rng, config.sigma_mode, config.fixed_sigma)
    single = PolicyConfig(
        price_grid=(candidate.price,), quantity_grid=(candidate.quantity,),
        kappa=config.kappa, predictive_samples=config.predictive_samples,
        salvage_mode=config.salvage_mode, sigma_mode=config.sigma_mode,
        fixed_sigma=config.fixed_sigma, rival_forecast=config.rival_forecast)
    means, sds = score_action_grid(state, rival_forecast, single, draws)
    return float(means[0]), float(sds[0])


def static_prior_scores(prior_mean, sigma, config: PolicyConfig,
                        firm_type: FirmType) -> np.ndarray:
    """Frozen-prior expected profit per grid action.

    Deliberately ignores inventory and history (rival forecast pinned to the
    grid midpoint) so the heuristic's choice is constant within a replication.
    """
    rival_price = _midpoint_action(config).price
    return _closed_form_grid_scores(np.asarray(prior_mean, dtype=float), sigma,
                                    config, rival_price, firm_type)


def select_action(state: BeliefState, config: PolicyConfig, policy: str,
                  rng: np.random.Generator,
                  static_prior_mean=None) -> tuple[Action, list[ActionScore]]:
    """Argmax action for the given policy, with per-action diagnostics.

    Ties break lexicographically (lower price, then lower quantity) via
    price-major action ordering and first-occurrence argmax.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    if policy == "classical-static-prior":
        if static_prior_mean is None:
            raise ValueError("static-prior policy needs the frozen prior mean")
        sigma = config.fixed_sigma
        means = static_prior_scores(static_prior_mean, sigma, config, state.own_type)
        sds = np.zeros_like(means)
        kappa = 0.0
    else:
        if config.predictive_samples < 2:
            raise ValueError("predictive_samples must be >= 2")
        kappa = config.kappa if policy == "proposed-credible-risk" else 0.0
        rival = forecast_rival_action(state, config)
        draws = predictive_draws(state.demand_posterior, config.predictive_samples,
                                 rng, config.sigma_mode, config.fixed_sigma)
        means, sds = score_action_grid(state, rival, config, draws)
    scores = means - kappa * sds
    best = int(np.argmax(scores))
    diagnostics = [
        ActionScore(_grid_action(config, k), float(means[k]), float(sds[k]),
                    float(scores[k]))
        for k in range(scores.size)
    ]
    return _grid_action(config, best), diagnostics
