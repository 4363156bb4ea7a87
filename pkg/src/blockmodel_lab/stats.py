"""Analytic formulas and Monte Carlo verifiers for the concentration machinery.

The recovery pipeline's error targets all reduce to a small calculus on the
pair (a, b) of degree-scale rates:

  c_tilde(a, b, gamma) = (sqrt(a^gamma b^(1-gamma)) - sqrt(b))^2
  R(p, q) = p(1-q) / (q(1-p))        (per-edge odds ratio)

plus a Chernoff bound for the signed three-binomial mixture

  X = Binom(alpha n, a/n) + Binom((beta-alpha) n, b/n) - Binom(beta n, b/n),

which is the signed-degree statistic of a single vertex under a level
bisection. The checks in this module are falsifiers: they evaluate the
claimed bounds against exact minimizers or Monte Carlo estimates and report
violations, they do not re-derive proofs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DerivedQuantities, SbmParams, derive


class ScheduleInfeasibleError(ValueError):
    """The optimal-round boosting schedule requires C > (10 chi k)^2."""


def c_tilde(a: float, b: float, gamma: float) -> float:
    """Level SNR (sqrt(a^gamma * b^(1-gamma)) - sqrt(b))^2.

    gamma = 1 recovers the full SNR C; gamma = 0 gives 0.
    """
    if not (a >= b > 0):
        raise ValueError(f"need a >= b > 0, got a={a}, b={b}")
    if not (0.0 <= gamma <= 1.0):
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    a_mix = a**gamma * b ** (1.0 - gamma)
    return (math.sqrt(a_mix) - math.sqrt(b)) ** 2


def log_odds_R(p: float, q: float) -> float:
    """log R(p, q) with R = p(1-q)/(q(1-p)); rejects boundary values."""
    if not (0.0 < p < 1.0 and 0.0 < q < 1.0):
        raise ValueError(f"p, q must lie in (0, 1), got p={p}, q={q}")
    return math.log(p) - math.log(q) + math.log1p(-q) - math.log1p(-p)


@dataclass(frozen=True)
class MixtureSpec:
    """Specification of the signed three-binomial mixture.

    alpha and beta are masses (0 < alpha <= beta <= 1); a and b are rates on
    the scale of n. Non-integer alpha*n etc. are rounded to nearest and the
    realized counts are recorded.
    """

    alpha: float
    beta: float
    a: float
    b: float
    n: int

    def __post_init__(self):
        if not (0.0 < self.alpha <= self.beta <= 1.0):
            raise ValueError("need 0 < alpha <= beta <= 1")
        if not (self.a >= self.b > 0):
            raise ValueError("need a >= b > 0")
        if self.a > self.n or self.b > self.n:
            raise ValueError("rates a, b must not exceed n")

    @property
    def gamma(self):
        return self.alpha / self.beta

    @property
    def counts(self):
        """Realized integer counts (n1, n2, n3) after rounding."""
        n1 = round(self.alpha * self.n)
        n3 = round(self.beta * self.n)
        n2 = n3 - n1
        return n1, n2, n3

    @property
    def rounding_error(self):
        n1, _, n3 = self.counts
        return max(abs(n1 - self.alpha * self.n), abs(n3 - self.beta * self.n))

    def mean(self):
        n1, n2, n3 = self.counts
        return n1 * self.a / self.n + n2 * self.b / self.n - n3 * self.b / self.n


def chernoff_tail_bound(spec: MixtureSpec, theta: float) -> float:
    """Chernoff bound exp(-beta*C_tilde + (theta/2) log R(a_mix/n, b/n)) for
    Pr[X <= theta]. This is a bound, not a probability: it may exceed 1.
    """
    g = spec.gamma
    ct = c_tilde(spec.a, spec.b, g)
    a_mix = spec.a**g * spec.b ** (1.0 - g)
    if a_mix == spec.b:
        log_r = 0.0
    else:
        log_r = log_odds_R(a_mix / spec.n, spec.b / spec.n)
    return math.exp(-spec.beta * ct + 0.5 * theta * log_r)


def sample_mixture(spec: MixtureSpec, seed, size=None):
    """Exact samples of the signed mixture (one sample if size is None)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n1, n2, n3 = spec.counts
    pa, pb = spec.a / spec.n, spec.b / spec.n
    shape = () if size is None else (size,)
    x = (
        rng.binomial(n1, pa, size=shape)
        + rng.binomial(n2, pb, size=shape)
        - rng.binomial(n3, pb, size=shape)
    )
    return int(x) if size is None else x.astype(np.int64)


@dataclass(frozen=True)
class TailReport:
    theta: float
    analytic_bound: float
    empirical_tail: float
    trials: int
    mc_stderr: float
    violated: bool


def mc_tail_check(spec: MixtureSpec, theta: float, trials: int, seed) -> TailReport:
    """Empirical Pr[X <= theta] vs the Chernoff bound, with a 4-stderr guard.

    A violation is flagged only if empirical - 4*stderr > bound, so the check
    has a per-point false-alarm rate around 3e-5.
    """
    if trials < 10_000:
        raise ValueError("trials must be at least 10^4 for a meaningful check")
    rng = np.random.default_rng(seed)
    hits = 0
    batch = 200_000
    done = 0
    while done < trials:
        m = min(batch, trials - done)
        x = sample_mixture(spec, rng, size=m)
        hits += int(np.count_nonzero(x <= theta))
        done += m
    p_hat = hits / trials
    stderr = math.sqrt(max(p_hat * (1.0 - p_hat), 1.0 / trials) / trials)
    bound = chernoff_tail_bound(spec, theta)
    return TailReport(
        theta=theta,
        analytic_bound=bound,
        empirical_tail=p_hat,
        trials=trials,
        mc_stderr=stderr,
        violated=bool(p_hat - 4.0 * stderr > bound),
    )


def concavity_check(a: float, b: float, n: float, gamma: float, grid_points: int = 1000) -> bool:
    """Grid check of f(x) >= 0 on [0, 1] for

    f(x) = x - (x + n/a - 1)^g (x + n/b - 1)^(1-g) + (n/a)^g (n/b)^(1-g) - 1,

    the inequality behind the mixture Chernoff bound. True iff the grid
    minimum is >= -1e-9.
    """
    if not (0.0 < gamma <= 1.0):
        raise ValueError("gamma must lie in (0, 1]")
    if a > n or b > n:
        raise ValueError("need a, b <= n")
    x = np.linspace(0.0, 1.0, grid_points)
    u = x + n / a - 1.0
    v = x + n / b - 1.0
    f = x - u**gamma * v ** (1.0 - gamma) + (n / a) ** gamma * (n / b) ** (1.0 - gamma) - 1.0
    return bool(f.min() >= -1e-9)


@dataclass(frozen=True)
class LevelParams:
    """Recursion-level parameters: at level i the graph splits into 2^i parts.

    beta = 2^-i, n_i = 2*beta*n (vertices in one level-i subproblem),
    k_i = beta*k (communities per side), gamma = 2^i / k (community mass on
    its side), C_tilde = c_tilde(a, b, gamma) is the level bisection SNR.
    """

    i: int
    beta: float
    n_i: int
    k_i: int
    gamma: float
    C_tilde: float
    tail_exponent: float  # (log 2)^2/4 * d eps^2 / (beta_i k^2)

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma_i must lie in (0, 1], got {self.gamma}")


def level_params(i: int, params: SbmParams, derived: DerivedQuantities | None = None) -> LevelParams:
    """Level-i parameters for the recursive bisection; 1 <= i <= log2(k)."""
    levels = int(math.log2(params.k))
    if not (1 <= i <= levels):
        raise ValueError(f"level i must lie in [1, log2(k)] = [1, {levels}], got {i}")
    if derived is None:
        derived = derive(params)
    beta = 2.0**-i
    gamma = (1.0 / params.k) / beta
    ct = c_tilde(derived.a, derived.b, gamma) if params.eps > 0 else 0.0
    expo = (math.log(2.0) ** 2 / 4.0) * params.d * params.eps**2 / (beta * params.k**2)
    return LevelParams(
        i=i,
        beta=beta,
        n_i=int(round(2 * beta * params.n)),
        k_i=int(round(beta * params.k)),
        gamma=gamma,
        C_tilde=ct,
        tail_exponent=expo,
    )


def log_R_bounds_check(params: SbmParams, i: int, derived: DerivedQuantities | None = None):
    """Check the level-i log odds-ratio sandwich and the rate-sum bound:

      gamma_i eps / 2 <= log R_i <= gamma_i eps log 3 + a/(n-a)
      sqrt(a_mix_i + b) <= sqrt(a + b) <= sqrt(3 d)

    The a/(n-a) term instantiates the vanishing remainder exactly. Returns
    (ok, details).
    """
    if derived is None:
        derived = derive(params)
    lv = level_params(i, params, derived)
    a, b, n = derived.a, derived.b, params.n
    g = lv.gamma
    a_mix = a**g * b ** (1.0 - g)
    log_r = log_odds_R(a_mix / n, b / n) if a_mix > b else 0.0
    lower = g * params.eps / 2.0
    upper = g * params.eps * math.log(3.0) + a / (n - a)
    sqrt_chain = (
        math.sqrt(a_mix + b) <= math.sqrt(a + b) + 1e-12
        and math.sqrt(a + b) <= math.sqrt(3.0 * params.d) + 1e-12
    )
    ok = (lower <= log_r + 1e-12) and (log_r <= upper + 1e-12) and sqrt_chain
    return ok, {"log_R": log_r, "lower": lower, "upper": upper, "sqrt_chain": sqrt_chain}


@dataclass(frozen=True)
class VoteParams:
    """Constants parameterizing one trimmed majority-voting stage.

    alpha_gamma is the per-vote margin floor (1-gamma) eps d / (16 k);
    beta_bound = 640 k/(1-gamma) * exp(-gamma C_tilde / 2) bounds the mass of
    vertices that may fall below it; rho is the single-vertex tail level and
    t the concentration rate knob.
    """

    gamma: float
    alpha_gamma: float
    beta_bound: float
    rho: float
    t: float
    rounds: int = 0


def vote_params(
    gamma: float,
    level: LevelParams,
    params: SbmParams,
    derived: DerivedQuantities | None = None,
    mode: str = "bisection",
    rounds: int = 0,
) -> VoteParams:
    """Voting constants for a level (bisection mode) or for the pairwise
    k-clustering stage. Admissible gamma: [0, 0.99] for bisections,
    [0, 1 - 1000 chi k / (eps sqrt(d))] for the pairwise mode.
    """
    if derived is None:
        derived = derive(params)
    eps, d, k = params.eps, params.d, params.k
    if mode == "bisection":
        if not (0.0 <= gamma <= 0.99):
            raise ValueError(f"bisection mode needs gamma in [0, 0.99], got {gamma}")
        rho = math.exp(-gamma * level.beta * level.C_tilde / 2.0)
    elif mode == "pairwise":
        if eps <= 0 or d <= 0:
            raise ValueError("pairwise mode needs eps > 0 and d > 0")
        gmax = 1.0 - 1000.0 * derived.chi * k / (eps * math.sqrt(d))
        if gamma < 0 or gamma > gmax:
            raise ValueError(
                f"pairwise mode needs gamma in [0, {gmax:.4f}] "
                f"(requires eps*sqrt(d) >= 1000*chi*k), got {gamma}"
            )
        rho = math.exp(-gamma * derived.C / k)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    alpha_gamma = (1.0 - gamma) * eps * d / (16.0 * k)
    beta_bound = 640.0 * k / (1.0 - gamma) * math.exp(-gamma * level.C_tilde / 2.0)
    t = 0.001 * (1.0 - gamma) * level.C_tilde
    return VoteParams(
        gamma=gamma, alpha_gamma=alpha_gamma, beta_bound=beta_bound, rho=rho, t=t, rounds=rounds
    )


@dataclass(frozen=True)
class BoostRound:
    mu: float
    gamma: float
    beta: float


@dataclass(frozen=True)
class BoostSchedule:
    """Two-round pairwise-boosting schedule (reporting-only at desk scale).

    round1 uses gamma_1 = 0.99; round2 uses the optimal-rate setting
    gamma_opt = 1 - 10 chi k / sqrt(C), which exists only when
    C > (10 chi k)^2. mu values are per-vertex error budgets.
    """

    round1: BoostRound
    round2: BoostRound


def build_boost_schedule(params: SbmParams, derived: DerivedQuantities | None = None) -> BoostSchedule:
    if derived is None:
        derived = derive(params)
    C, k, chi = derived.C, params.k, derived.chi
    r1 = BoostRound(mu=1.0 / k**3, gamma=0.99, beta=1000.0 * k * math.exp(-0.99 * C / k))
    if C <= (10.0 * chi * k) ** 2:
        raise ScheduleInfeasibleError(
            f"optimal round needs C > (10 chi k)^2 = {(10 * chi * k) ** 2:.0f}, got C = {C:.2f}"
        )
    g_opt = 1.0 - 10.0 * chi * k / math.sqrt(C)
    r2 = BoostRound(
        mu=math.exp(-0.99 * C / k),
        gamma=g_opt,
        beta=math.sqrt(C) / (10.0 * chi) * math.exp(-g_opt * C / k),
    )
    return BoostSchedule(round1=r1, round2=r2)


@dataclass(frozen=True)
class MarginReport:
    """Result of the exact worst-subset margin check against the voting bound."""

    violations: int
    worst_slack: float
    worst_size: int
    skipped: bool
    masked: bool


def worst_margin_check(
    graph,
    y: np.ndarray,
    level: LevelParams,
    gamma: float,
    params: SbmParams,
    derived: DerivedQuantities | None = None,
    mask: np.ndarray | None = None,
) -> MarginReport:
    """Exact falsifier for the voting lower bound on an uncorrupted graph.

    For the planted level bisection y, the margins are m_u = (Gbar y)_u y_u.
    The inner product <Gbar y . y, z> is linear in z, so its exact minimum
    over ||z||_1 = m is the sum of the m smallest margins. The claimed bound,

       unmasked: (1-g) eps d / (8k)  * (m -  96 rho k n_i / (1-g))
       masked:   (1-g) eps d / (16k) * (m - 640 rho k n_i / (1-g))

    with rho = exp(-g beta_i C_tilde_i / 2), is checked for every m. The
    masked variant restricts Gbar to a trusted set s (rows and columns
    outside s zeroed) and must satisfy ||s||_1 >= (1 - exp(-2C)) n.

    Returns the number of violated sizes and the worst slack
    min_m (exact minimum - bound). eps = 0 instances are outside the
    theorem's hypothesis and are flagged skipped.
    """
    if derived is None:
        derived = derive(params)
    if params.eps <= 0.0 or derived.C <= 0.0:
        return MarginReport(0, math.inf, -1, skipped=True, masked=mask is not None)
    n = params.n
    d = params.d
    A = graph.adjacency
    yf = y.astype(np.float64)
    if mask is None:
        gy = A @ yf - (d / n) * yf.sum() + (d / n) * yf
    else:
        s = mask.astype(np.float64)
        if s.sum() < (1.0 - math.exp(-2.0 * derived.C)) * n - 1e-9:
            raise ValueError("mask keeps too few vertices for the masked voting bound")
        sy = s * yf
        gy = s * (A @ sy) - (d / n) * sy.sum() * s + (d / n) * sy
    margins = gy * yf
    margins.sort()
    prefix = np.concatenate(([0.0], np.cumsum(margins)))
    m = np.arange(n + 1, dtype=np.float64)
    g = gamma
    rho = math.exp(-g * level.beta * level.C_tilde / 2.0)
    if mask is None:
        bound = (1.0 - g) * params.eps * d / (8.0 * params.k) * (
            m - 96.0 * rho * params.k * level.n_i / (1.0 - g)
        )
    else:
        bound = (1.0 - g) * params.eps * d / (16.0 * params.k) * (
            m - 640.0 * rho * params.k * level.n_i / (1.0 - g)
        )
    slack = prefix - bound
    worst = int(np.argmin(slack))
    violations = int(np.count_nonzero(slack < -1e-9 * max(1.0, abs(bound).max())))
    return MarginReport(
        violations=violations,
        worst_slack=float(slack[worst]),
        worst_size=worst,
        skipped=False,
        masked=mask is not None,
    )
