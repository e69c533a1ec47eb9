"""Bayesian demand filtering under censoring, plus rival-type beliefs.

The demand posterior is normal-inverse-gamma: coefficients | variance are
Gaussian with scale matrix S, and the noise variance is inverse-gamma(a, b).
Uncensored observations update in closed form (rank-one, order-invariant up
to batch equivalence). Censored observations are handled either by a single
truncated-normal imputation per record or by a Gibbs refresh over retained
history.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr, ndtri

from .market import DemandParams

__all__ = [
    "PosteriorHyper",
    "TypeBelief",
    "ObservationRecord",
    "PosteriorDegenerateError",
    "conjugate_update",
    "batch_conjugate_posterior",
    "truncated_normal_lower",
    "truncated_normal_upper",
    "sample_truncated_latent",
    "gibbs_refresh",
    "online_update",
    "update_type_belief",
    "posterior_mse",
]


class PosteriorDegenerateError(RuntimeError):
    """Posterior scale matrix lost positive definiteness beyond repair."""


def _ensure_pd(S: np.ndarray, jitter: float = 1e-10) -> np.ndarray:
    """Symmetrize and verify positive definiteness, with a jitter retry."""
    S = 0.5 * (S + S.T)
    try:
        np.linalg.cholesky(S)
        return S
    except np.linalg.LinAlgError:
        scale = max(np.trace(S) / S.shape[0], 1.0)
        for boost in (1.0, 1e3, 1e6):
            cand = S + jitter * boost * scale * np.eye(S.shape[0])
            try:
                np.linalg.cholesky(cand)
                return cand
            except np.linalg.LinAlgError:
                continue
    raise PosteriorDegenerateError("posterior scale matrix is not positive definite")


@dataclass
class PosteriorHyper:
    """Normal-inverse-gamma hyperparameters (m, S, a, b)."""

    m: np.ndarray
    S: np.ndarray
    a: float
    b: float

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        self.S = _ensure_pd(np.asarray(self.S, dtype=float))
        if not (self.a > 0 and self.b > 0):
            raise ValueError("inverse-gamma shape and rate must be positive")

    def copy(self) -> "PosteriorHyper":
        return PosteriorHyper(self.m.copy(), self.S.copy(), self.a, self.b)

    def noise_variance_mean(self) -> float:
        """Posterior mean of the noise variance (requires a > 1)."""
        if self.a <= 1:
            raise ValueError("noise variance mean undefined for a <= 1")
        return self.b / (self.a - 1.0)

    def noise_sd(self) -> float:
        return float(np.sqrt(self.noise_variance_mean()))


@dataclass
class TypeBelief:
    """Discrete probability vector over the rival's type set."""

    probs: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if np.any(self.probs < -1e-15):
            raise ValueError("belief entries must be nonnegative")
        if abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValueError("belief must sum to one")


@dataclass(frozen=True)
class ObservationRecord:
    """One firm-period demand observation for the filter."""

    covariate: np.ndarray
    sales: float
    stock: float
    censored: bool
    floored: bool = False  # zero sales without a stockout: latent demand <= 0


def conjugate_update(hyper: PosteriorHyper, covariate: np.ndarray, demand: float,
                     noise_sd: float | None = None) -> PosteriorHyper:
    """Exact one-observation posterior update.

    Default is the normal-inverse-gamma recursion (rank-one update of S,
    a += 1/2, b += scaled squared residual / 2). With ``noise_sd`` given, S is
    treated as the coefficient covariance under a fixed noise scale and the
    inverse-gamma component is left untouched.
    """
    x = np.asarray(covariate, dtype=float)
    y = float(demand)
    Sx = hyper.S @ x
    resid = y - float(x @ hyper.m)
    if noise_sd is None:
        denom = 1.0 + float(x @ Sx)
        a = hyper.a + 0.5
        b = hyper.b + 0.5 * resid * resid / denom
    else:
        denom = noise_sd**2 + float(x @ Sx)
        a, b = hyper.a, hyper.b
    m = hyper.m + Sx * (resid / denom)
    S = hyper.S - np.outer(Sx, Sx) / denom
    return PosteriorHyper(m, S, a, b)


def batch_conjugate_posterior(prior: PosteriorHyper, X: np.ndarray,
                              y: np.ndarray) -> PosteriorHyper:
    """Closed-form batch posterior for uncensored data (normal-inverse-gamma)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    S0_inv = np.linalg.inv(prior.S)
    Sn_inv = S0_inv + X.T @ X
    Sn = np.linalg.inv(Sn_inv)
    mn = Sn @ (S0_inv @ prior.m + X.T @ y)
    a = prior.a + 0.5 * len(y)
    b = prior.b + 0.5 * float(y @ y + prior.m @ S0_inv @ prior.m - mn @ Sn_inv @ mn)
    return PosteriorHyper(mn, Sn, a, b)


_TAIL_CUT = 8.0


def truncated_normal_lower(mean, sd, lower, rng: np.random.Generator):
    """Draw from Normal(mean, sd^2) restricted to [lower, inf).

    Vectorized inverse-CDF on the upper tail; standardized truncation points
    beyond 8 fall back to a translated-exponential rejection sampler whose
    acceptance rate tends to one in the far tail. Scalars in, scalar out.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    lower = np.asarray(lower, dtype=float)
    scalar = mean.ndim == 0 and sd.ndim == 0 and lower.ndim == 0
    mean, sd, lower = np.broadcast_arrays(np.atleast_1d(mean), np.atleast_1d(sd),
                                          np.atleast_1d(lower))
    out = np.empty(mean.shape)

    no_trunc = np.isneginf(lower)
    alpha = np.where(no_trunc, -np.inf, (lower - mean) / sd)
    body = ~no_trunc & (alpha <= _TAIL_CUT)
    tail = ~no_trunc & (alpha > _TAIL_CUT)

    # fixed draw order: one uniform per element, extra draws only for tail cells
    u = 1.0 - rng.random(mean.shape)  # in (0, 1]
    if np.any(no_trunc):
        z = ndtri(u[no_trunc])
        out[no_trunc] = mean[no_trunc] + sd[no_trunc] * z
    if np.any(body):
        q = ndtr(-alpha[body])  # upper-tail mass at the cut
        z = -ndtri(u[body] * q)
        out[body] = mean[body] + sd[body] * z
    for idx in np.argwhere(tail):
        i = tuple(idx)
        a = alpha[i]
        lam = 0.5 * (a + np.sqrt(a * a + 4.0))
        while True:
            z = a + rng.exponential(1.0) / lam
            if rng.random() <= np.exp(-0.5 * (z - lam) ** 2):
                break
        out[i] = mean[i] + sd[i] * z
    out = np.maximum(out, np.where(no_trunc, -np.inf, lower))
    return float(out[0]) if scalar else out


def truncated_normal_upper(mean, sd, upper, rng: np.random.Generator):
    """Draw from Normal(mean, sd^2) restricted to (-inf, upper]; by reflection."""
    draw = truncated_normal_lower(-np.asarray(mean, dtype=float), sd,
                                  -np.asarray(upper, dtype=float), rng)
    return -draw


def sample_truncated_latent(hyper: PosteriorHyper, covariate: np.ndarray,
                            bound: float, sigma_draw: float,
                            rng: np.random.Generator,
                            side: str = "lower",
                            literal_cov: bool = False) -> float:
    """One posterior-predictive latent-demand draw past a censoring bound.

    ``side='lower'`` restricts to [bound, inf) — a stockout hides the demand
    excess above stock. ``side='upper'`` restricts to (-inf, bound] — zero
    sales without a stockout reveal only that latent demand was at most zero.
    ``literal_cov`` marks S as the coefficient covariance itself
    (known-variance recursion) rather than the scale matrix of the
    normal-inverse-gamma family.
    """
    if not sigma_draw > 0:
        raise ValueError("sigma_draw must be positive")
    x = np.asarray(covariate, dtype=float)
    mean = float(x @ hyper.m)
    quad = float(x @ hyper.S @ x)
    if literal_cov:
        sd = float(np.sqrt(sigma_draw**2 + quad))
    else:
        sd = sigma_draw * float(np.sqrt(1.0 + quad))
    if side == "lower":
        return truncated_normal_lower(mean, sd, bound, rng)
    if side == "upper":
        return truncated_normal_upper(mean, sd, bound, rng)
    raise ValueError(f"unknown truncation side {side!r}")


def gibbs_refresh(prior: PosteriorHyper, history: list[ObservationRecord],
                  sweeps: int, rng: np.random.Generator,
                  burn_in: int = 500,
                  noise_sd: float | None = None) -> PosteriorHyper:
    """Data-augmentation Gibbs over the full history, moment-matched back to
    normal-inverse-gamma hyperparameters.

    Sweep: impute censored latents from their truncated-normal conditional,
    draw coefficients given the variance, draw the variance given the
    coefficients. With no censored records the output agrees with the batch
    conjugate posterior up to Monte Carlo error. ``noise_sd`` pins the noise
    scale (known-variance recursion: S is the literal coefficient
    covariance and the inverse-gamma component is left untouched).
    """
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    if not history:
        return prior.copy()
    if noise_sd is not None:
        return _gibbs_refresh_fixed(prior, history, sweeps, rng, burn_in,
                                    float(noise_sd))

    X, y, stocks, cens, floored = _history_arrays(history)
    n, p = X.shape

    S0_inv = np.linalg.inv(prior.S)
    S0_inv_m0 = S0_inv @ prior.m
    Sn = np.linalg.inv(S0_inv + X.T @ X)
    Ln = np.linalg.cholesky(Sn)

    psi = prior.m.copy()
    sigma2 = prior.b / (prior.a + 1.0)  # prior mode
    coef_draws = np.empty((sweeps, p))
    var_draws = np.empty(sweeps)

    latent = y.copy()
    for it in range(burn_in + sweeps):
        if cens.any():
            mu_c = X[cens] @ psi
            latent[cens] = truncated_normal_lower(
                mu_c, np.full(mu_c.shape, np.sqrt(sigma2)), stocks[cens], rng)
        if floored.any():
            mu_f = X[floored] @ psi
            latent[floored] = truncated_normal_upper(
                mu_f, np.full(mu_f.shape, np.sqrt(sigma2)),
                np.zeros(mu_f.shape), rng)
        mn = Sn @ (S0_inv_m0 + X.T @ latent)
        psi = mn + np.sqrt(sigma2) * (Ln @ rng.standard_normal(p))
        resid = latent - X @ psi
        quad = float(resid @ resid + (psi - prior.m) @ S0_inv @ (psi - prior.m))
        sigma2 = (prior.b + 0.5 * quad) / rng.gamma(prior.a + 0.5 * (n + p))
        if it >= burn_in:
            coef_draws[it - burn_in] = psi
            var_draws[it - burn_in] = sigma2

    m = coef_draws.mean(axis=0)
    v_mean = var_draws.mean()
    v_var = var_draws.var(ddof=1)
    if v_var > 0:
        a = v_mean**2 / v_var + 2.0
        b = v_mean * (a - 1.0)
    else:
        a, b = prior.a + 0.5 * n, v_mean * (prior.a + 0.5 * n - 1.0)
    S = np.cov(coef_draws, rowvar=False) / v_mean
    return PosteriorHyper(m, S, a, b)


def _history_arrays(history: list[ObservationRecord]):
    X = np.stack([np.asarray(r.covariate, dtype=float) for r in history])
    y = np.array([r.sales for r in history], dtype=float)
    stocks = np.array([r.stock for r in history], dtype=float)
    cens = np.array([r.censored for r in history], dtype=bool)
    floored = np.array([r.floored and not r.censored for r in history],
                       dtype=bool)
    return X, y, stocks, cens, floored


def _gibbs_refresh_fixed(prior: PosteriorHyper, history: list[ObservationRecord],
                         sweeps: int, rng: np.random.Generator,
                         burn_in: int, noise_sd: float) -> PosteriorHyper:
    """Known-variance data-augmentation chain; only coefficients are latent."""
    X, y, stocks, cens, floored = _history_arrays(history)
    n, p = X.shape
    s2 = noise_sd**2

    S0_inv = np.linalg.inv(prior.S)
    Sn = np.linalg.inv(S0_inv + X.T @ X / s2)
    Ln = np.linalg.cholesky(Sn)
    mn_base = S0_inv @ prior.m

    psi = prior.m.copy()
    coef_draws = np.empty((sweeps, p))
    latent = y.copy()
    sd_vec = np.full(int(cens.sum()), noise_sd)
    sd_vec_f = np.full(int(floored.sum()), noise_sd)
    for it in range(burn_in + sweeps):
        if cens.any():
            latent[cens] = truncated_normal_lower(X[cens] @ psi, sd_vec,
                                                  stocks[cens], rng)
        if floored.any():
            latent[floored] = truncated_normal_upper(
                X[floored] @ psi, sd_vec_f, np.zeros(sd_vec_f.shape), rng)
        mn = Sn @ (mn_base + X.T @ latent / s2)
        psi = mn + Ln @ rng.standard_normal(p)
        if it >= burn_in:
            coef_draws[it - burn_in] = psi

    m = coef_draws.mean(axis=0)
    S = np.cov(coef_draws, rowvar=False)
    return PosteriorHyper(m, _ensure_pd(S), prior.a, prior.b)


def online_update(hyper: PosteriorHyper, record: ObservationRecord,
                  rng: np.random.Generator, mode: str = "single-imputation",
                  prior: PosteriorHyper | None = None,
                  history: list[ObservationRecord] | None = None,
                  sweeps: int = 300, burn_in: int = 100,
                  noise_sd: float | None = None) -> PosteriorHyper:
    """Per-period posterior recursion.

    Uncensored records take the exact conjugate path. Censored (stockout)
    and floored (zero-sales) records are either handled by one
    truncated-normal imputation at the current posterior predictive
    (default) or by a Gibbs refresh over the retained history
    (``mode='gibbs-every-period'``, requires ``prior`` + ``history``
    including the new record). ``noise_sd`` switches to the known-variance
    Gaussian recursion throughout.
    """
    if not record.censored and not record.floored:
        return conjugate_update(hyper, record.covariate, record.sales,
                                noise_sd=noise_sd)
    if mode == "single-imputation":
        sd = hyper.noise_sd() if noise_sd is None else noise_sd
        literal = noise_sd is not None
        if record.censored:
            latent = sample_truncated_latent(hyper, record.covariate,
                                             record.stock, sd, rng,
                                             side="lower", literal_cov=literal)
        else:
            latent = sample_truncated_latent(hyper, record.covariate, 0.0,
                                             sd, rng, side="upper",
                                             literal_cov=literal)
        return conjugate_update(hyper, record.covariate, latent,
                                noise_sd=noise_sd)
    if mode == "gibbs-every-period":
        if prior is None or history is None:
            raise ValueError("gibbs mode needs the original prior and full history")
        return gibbs_refresh(prior, history, sweeps, rng, burn_in=burn_in,
                             noise_sd=noise_sd)
    raise ValueError(f"unknown online update mode {mode!r}")


def update_type_belief(belief: TypeBelief, observed_rival_action,
                       action_model) -> TypeBelief:
    """Pointwise Bayes update of the rival-type belief.

    ``action_model(action)`` returns the per-type likelihood vector of the
    observed action. An all-zero likelihood (degenerate evidence) returns the
    prior unchanged with the degenerate flag set.
    """
    like = np.asarray(action_model(observed_rival_action), dtype=float)
    if like.shape != belief.probs.shape:
        raise ValueError("likelihood vector does not match belief support")
    if np.any(like < 0):
        raise ValueError("likelihoods must be nonnegative")
    post = belief.probs * like
    total = post.sum()
    if total <= 0.0:
        return TypeBelief(belief.probs.copy(), degenerate=True)
    return TypeBelief(post / total)


def posterior_mse(hyper: PosteriorHyper, truth: DemandParams) -> float:
    """Mean squared deviation of the coefficient posterior mean from truth."""
    diff = hyper.m - truth.coefficients()
    return float(np.mean(diff * diff))
