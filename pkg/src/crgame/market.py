"""Ground-truth market physics: demand, censoring, inventory, profit.

All functions are pure; randomness enters only through caller-supplied
noise draws or generators. Rival stockout enters demand with a one-period
lag (initialized false), which breaks the simultaneity between the two
firms' demand realizations within a period.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "FirmType",
    "DemandParams",
    "MarketState",
    "Action",
    "PeriodOutcome",
    "latent_demand",
    "censor_sales",
    "step_inventory",
    "one_period_profit",
    "covariate_vector",
    "simulate_period",
]

SALVAGE_MODES = ("per-period", "terminal")


@dataclass(frozen=True)
class FirmType:
    """Private operational type: unit cost, holding cost, salvage value."""

    c: float
    h: float
    s: float

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("procurement cost must be positive")
        if self.h < 0 or self.s < 0:
            raise ValueError("holding cost and salvage value must be nonnegative")
        if not self.s < self.c:
            raise ValueError("salvage value must be below procurement cost")


@dataclass(frozen=True)
class DemandParams:
    """Linear demand coefficients (signed own-price slope) and noise sd."""

    beta0: float
    beta1: float
    beta2: float
    beta3: float
    sigma: float

    def __post_init__(self):
        if not self.beta1 < 0:
            raise ValueError("own-price coefficient must be negative")
        if self.beta2 < 0 or self.beta3 < 0:
            raise ValueError("rival-price and spillover coefficients must be nonnegative")
        if not self.sigma > 0:
            raise ValueError("noise sd must be positive")

    def coefficients(self) -> np.ndarray:
        return np.array([self.beta0, self.beta1, self.beta2, self.beta3])


@dataclass(frozen=True)
class Action:
    quantity: float
    price: float


@dataclass(frozen=True)
class MarketState:
    """Public per-period market state. Stockout flags are lagged indicators."""

    period: int = 1
    inventory: tuple[float, float] = (0.0, 0.0)
    last_prices: tuple[float, float] = (0.0, 0.0)
    last_stockout: tuple[bool, bool] = (False, False)

    def __post_init__(self):
        if self.period < 1:
            raise ValueError("period starts at 1")
        if min(self.inventory) < 0:
            raise ValueError("inventory must be nonnegative")


@dataclass(frozen=True)
class PeriodOutcome:
    latent_demand: float
    sales: float
    stockout: bool
    profit: float
    next_inventory: float


def latent_demand(params: DemandParams, own_price: float, rival_price: float,
                  rival_stockout: bool, noise: float) -> float:
    """Latent (uncensored) demand; may be negative."""
    coefs = params.coefficients()
    x = covariate_vector(own_price, rival_price, rival_stockout)
    return float(coefs @ x + noise)


def censor_sales(latent: float, stock: float) -> tuple[float, bool]:
    """Observed sales and stockout flag given available stock."""
    if stock < 0:
        raise ValueError("stock must be nonnegative")
    sales = min(max(latent, 0.0), stock)
    return sales, latent > stock


def step_inventory(stock: float, sales: float) -> float:
    if not 0.0 <= sales <= stock:
        raise AssertionError("sales outside [0, stock]: internal logic error")
    return stock - sales


def one_period_profit(action: Action, sales: float, next_inventory: float,
                      firm_type: FirmType, terminal: bool = False,
                      salvage_mode: str = "per-period") -> float:
    """Revenue minus procurement and holding, plus salvage credit.

    Salvage applies every period in per-period mode and only at the horizon
    end in terminal mode.
    """
    if salvage_mode not in SALVAGE_MODES:
        raise ValueError(f"unknown salvage mode {salvage_mode!r}")
    salvage_on = salvage_mode == "per-period" or terminal
    profit = (action.price * sales
              - firm_type.c * action.quantity
              - firm_type.h * next_inventory)
    if salvage_on:
        profit += firm_type.s * next_inventory
    return profit


def covariate_vector(own_price: float, rival_price: float,
                     rival_stockout: bool) -> np.ndarray:
    """Regression covariate matched positionally to DemandParams coefficients."""
    return np.array([1.0, own_price, rival_price, 1.0 if rival_stockout else 0.0])


def simulate_period(state: MarketState, actions: tuple[Action, Action],
                    params: DemandParams, types: tuple[FirmType, FirmType],
                    rng: np.random.Generator, salvage_mode: str = "per-period",
                    terminal: bool = False) -> tuple[tuple[PeriodOutcome, PeriodOutcome], MarketState]:
    """Advance the market one period. Draws one noise term per firm, in firm order."""
    noise = rng.normal(0.0, params.sigma, size=2)
    outcomes = []
    new_inventory = []
    new_stockout = []
    for i in (0, 1):
        j = 1 - i
        stock = state.inventory[i] + actions[i].quantity
        demand = latent_demand(params, actions[i].price, actions[j].price,
                               state.last_stockout[j], noise[i])
        sales, out = censor_sales(demand, stock)
        left = step_inventory(stock, sales)
        profit = one_period_profit(actions[i], sales, left, types[i],
                                   terminal=terminal, salvage_mode=salvage_mode)
        outcomes.append(PeriodOutcome(demand, sales, out, profit, left))
        new_inventory.append(left)
        new_stockout.append(out)
    next_state = replace(
        state,
        period=state.period + 1,
        inventory=(new_inventory[0], new_inventory[1]),
        last_prices=(actions[0].price, actions[1].price),
        last_stockout=(new_stockout[0], new_stockout[1]),
    )
    return (outcomes[0], outcomes[1]), next_state
