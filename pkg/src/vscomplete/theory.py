"""Monte Carlo check of exact-recovery bounds for direct vs pool-restricted thresholding.

Model: a universe of N codes, s of which are members with latent score
tau + gamma; every other code scores tau - gamma. The estimator adds
independent Gaussian noise with standard deviation sigma / sqrt(n) to each
code. The direct predictor thresholds all N codes at tau; the pool-restricted
predictor thresholds only a retrieved pool of K codes, which misses one
member with probability eps_ret. Both predictors read the same noise draw,
so a direct success with full coverage implies a pool success.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import InfeasibleTarget, InvalidConfig

EXACT_PATH_MAX_N = 10_000
WILSON_Z = 1.959963984540054


@dataclass
class TheoryConfig:
    N: int = 1000
    K: int = 50
    s: int = 5
    gamma: float = 0.3
    tau: float = 0.0
    sigma: float = 1.0
    n: int = 200
    eps_ret: float = 0.0
    delta: float = 0.05
    trials: int = 10_000
    seed: int = 0

    def validate(self) -> None:
        problems = []
        if not 0 < self.s <= self.K <= self.N:
            problems.append("need 0 < s <= K <= N")
        if not self.gamma > 0:
            problems.append("gamma must be > 0")
        if not self.sigma > 0:
            problems.append("sigma must be > 0")
        if not self.n >= 1:
            problems.append("n must be >= 1")
        if not 0.0 <= self.eps_ret <= 1.0:
            problems.append("eps_ret must lie in [0, 1]")
        if not 0.0 < self.delta < 1.0:
            problems.append("delta must lie in (0, 1)")
        if not self.trials >= 1:
            problems.append("trials must be >= 1")
        if problems:
            raise InvalidConfig("; ".join(problems))

    @classmethod
    def from_dict(cls, d: dict) -> "TheoryConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise InvalidConfig(f"unknown theory config fields: {', '.join(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @property
    def noise_sd(self) -> float:
        return self.sigma / math.sqrt(self.n)


@dataclass
class TrialOutcome:
    direct_success: bool
    rasc_success: bool
    covered: bool


def _pool_miss(cfg: TheoryConfig, rng: np.random.Generator) -> bool:
    return bool(rng.random() < cfg.eps_ret)


def simulate_trial(cfg: TheoryConfig, rng: np.random.Generator, exact: bool | None = None) -> TrialOutcome:
    """One coupled trial. ``exact`` draws noise for all N codes; otherwise the
    N - K codes outside the pool are summarized by the distribution of their
    maximum noise. ``None`` picks exact for N <= 10_000."""
    if exact is None:
        exact = cfg.N <= EXACT_PATH_MAX_N
    return _trial_exact(cfg, rng) if exact else _trial_closed(cfg, rng)


def _trial_exact(cfg: TheoryConfig, rng: np.random.Generator) -> TrialOutcome:
    N, K, s = cfg.N, cfg.K, cfg.s
    members = rng.choice(N, size=s, replace=False)
    miss = _pool_miss(cfg, rng)
    is_member = np.zeros(N, dtype=bool)
    is_member[members] = True
    theta = np.where(is_member, cfg.tau + cfg.gamma, cfg.tau - cfg.gamma)
    estimate = theta + rng.normal(0.0, cfg.noise_sd, size=N)
    predicted = estimate >= cfg.tau
    direct = bool(np.array_equal(predicted, is_member))

    in_pool = members
    if miss:
        in_pool = np.delete(members, rng.integers(s))
    non_members = np.flatnonzero(~is_member)
    fill = non_members[rng.choice(len(non_members), size=K - len(in_pool), replace=False)]
    pool = np.concatenate([in_pool, fill])
    rasc = (not miss) and bool(np.array_equal(predicted[pool], is_member[pool]))
    return TrialOutcome(direct, rasc, not miss)


def _trial_closed(cfg: TheoryConfig, rng: np.random.Generator) -> TrialOutcome:
    N, K, s = cfg.N, cfg.K, cfg.s
    sd = cfg.noise_sd
    miss = _pool_miss(cfg, rng)
    pooled_members = s - 1 if miss else s
    n_fill = K - pooled_members
    member_noise = rng.normal(0.0, sd, size=s)
    fill_noise = rng.normal(0.0, sd, size=n_fill)
    members_ok = member_noise >= -cfg.gamma
    fill_ok = bool(np.all(fill_noise < cfg.gamma))
    # non-members outside the pool: all correct iff their maximum noise < gamma;
    # P(max < gamma) = Phi(gamma / sd) ** m, evaluated in log space
    m = N - s - n_fill
    log_p_ok = m * norm.logcdf(cfg.gamma / sd)
    outside_ok = bool(math.log(rng.random()) < log_p_ok) if m > 0 else True
    direct = bool(members_ok.all()) and fill_ok and outside_ok
    rasc = (not miss) and bool(members_ok.all()) and fill_ok
    return TrialOutcome(direct, rasc, not miss)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent stream per (seed, trial); results do not depend on trial order."""
    return np.random.default_rng([seed, trial])


def wilson_interval(successes: int, total: int, z: float = WILSON_Z) -> tuple[float, float]:
    if total == 0:
        return (0.0, 1.0)
    p = successes / total
    denom = 1.0 + z * z / total
    center = (p + z * z / (2 * total)) / denom
    half = z * math.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def bound_direct(N: int, n: float, sigma: float, gamma: float) -> float:
    return 2.0 * N * math.exp(-n * gamma**2 / (2.0 * sigma**2))


def bound_rasc(K: int, n: float, sigma: float, gamma: float, eps_ret: float = 0.0) -> float:
    return eps_ret + 2.0 * K * math.exp(-n * gamma**2 / (2.0 * sigma**2))


def n_required_direct(N: int, delta: float, sigma: float, gamma: float) -> int:
    """Smallest integer n with 2N exp(-n gamma^2 / 2 sigma^2) <= delta."""
    if not 0.0 < delta < 1.0 or N < 1 or sigma <= 0 or gamma <= 0:
        raise InvalidConfig("need delta in (0, 1), N >= 1, sigma > 0, gamma > 0")
    return math.ceil(2.0 * sigma**2 / gamma**2 * math.log(2.0 * N / delta))


def n_required_rasc(K: int, delta: float, eps_ret: float, sigma: float, gamma: float) -> int:
    """Pool-restricted counterpart; infeasible once delta <= eps_ret."""
    if not 0.0 < delta < 1.0 or K < 1 or sigma <= 0 or gamma <= 0 or not 0.0 <= eps_ret <= 1.0:
        raise InvalidConfig("need delta in (0, 1), eps_ret in [0, 1], K >= 1, sigma > 0, gamma > 0")
    if delta <= eps_ret:
        raise InfeasibleTarget(f"target failure {delta} is at or below the retrieval miss floor {eps_ret}")
    return math.ceil(2.0 * sigma**2 / gamma**2 * math.log(2.0 * K / (delta - eps_ret)))


@dataclass
class TheoryResult:
    config: TheoryConfig
    direct_failures: int
    rasc_failures: int
    covered_trials: int
    dominance_violations: int
    bound_direct: float
    bound_rasc: float
    n_required_direct: int
    n_required_rasc: int | None

    @property
    def trials(self) -> int:
        return self.config.trials

    @property
    def p_fail_direct_mc(self) -> float:
        return self.direct_failures / self.trials

    @property
    def p_fail_rasc_mc(self) -> float:
        return self.rasc_failures / self.trials

    @property
    def direct_interval(self) -> tuple[float, float]:
        return wilson_interval(self.direct_failures, self.trials)

    @property
    def rasc_interval(self) -> tuple[float, float]:
        return wilson_interval(self.rasc_failures, self.trials)

    def mc_standard_error(self, which: str) -> float:
        p = self.p_fail_direct_mc if which == "direct" else self.p_fail_rasc_mc
        return math.sqrt(p * (1 - p) / self.trials)

    def row(self) -> dict:
        lo_d, hi_d = self.direct_interval
        lo_r, hi_r = self.rasc_interval
        return {
            **dataclasses.asdict(self.config),
            "p_fail_direct_mc": self.p_fail_direct_mc,
            "p_fail_direct_lo": lo_d,
            "p_fail_direct_hi": hi_d,
            "p_fail_rasc_mc": self.p_fail_rasc_mc,
            "p_fail_rasc_lo": lo_r,
            "p_fail_rasc_hi": hi_r,
            "bound_direct": self.bound_direct,
            "bound_rasc": self.bound_rasc,
            "bound_direct_vacuous": self.bound_direct >= 1.0,
            "bound_rasc_vacuous": self.bound_rasc >= 1.0,
            "n_required_direct": self.n_required_direct,
            "n_required_rasc": self.n_required_rasc if self.n_required_rasc is not None else "",
            "dominance_violations": self.dominance_violations,
        }


def estimate_recovery(cfg: TheoryConfig, exact: bool | None = None) -> TheoryResult:
    cfg.validate()
    direct_fail = rasc_fail = covered = violations = 0
    for t in range(cfg.trials):
        out = simulate_trial(cfg, trial_rng(cfg.seed, t), exact)
        direct_fail += not out.direct_success
        rasc_fail += not out.rasc_success
        covered += out.covered
        violations += out.covered and out.direct_success and not out.rasc_success
    try:
        n_rasc = n_required_rasc(cfg.K, cfg.delta, cfg.eps_ret, cfg.sigma, cfg.gamma)
    except InfeasibleTarget:
        n_rasc = None
    return TheoryResult(
        config=cfg,
        direct_failures=direct_fail,
        rasc_failures=rasc_fail,
        covered_trials=covered,
        dominance_violations=violations,
        bound_direct=bound_direct(cfg.N, cfg.n, cfg.sigma, cfg.gamma),
        bound_rasc=bound_rasc(cfg.K, cfg.n, cfg.sigma, cfg.gamma, cfg.eps_ret),
        n_required_direct=n_required_direct(cfg.N, cfg.delta, cfg.sigma, cfg.gamma),
        n_required_rasc=n_rasc,
    )


def sweep_n(cfg: TheoryConfig, n_values) -> list[TheoryResult]:
    return [estimate_recovery(dataclasses.replace(cfg, n=int(n))) for n in n_values]


def first_n_reaching(results: list[TheoryResult], which: str, success: float = 0.95) -> int | None:
    """Smallest swept n whose MC success rate reaches ``success``."""
    for r in sorted(results, key=lambda r: r.config.n):
        p = r.p_fail_direct_mc if which == "direct" else r.p_fail_rasc_mc
        if 1.0 - p >= success:
            return r.config.n
    return None
