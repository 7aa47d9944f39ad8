"""Cohort statistics: normality screening, two-group tests, power and sample size.

The test-selection rule mirrors the reporting convention of the tables this
toolkit reproduces: samples are screened with Shapiro-Wilk at alpha = 0.05
and compared with an unequal-variance (Welch/Satterthwaite) t-test when both
screens pass, otherwise with a Mann-Whitney test.  Power and a-priori sample
sizes use the noncentral-t formulation of the two-sided Welch test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats as spstats

from .errors import (
    DegenerateSampleError,
    DomainError,
    UnattainablePowerError,
    UnsupportedSizeError,
)

NORMALITY_ALPHA = 0.05


@dataclass
class GroupSummary:
    n: int
    mean: float
    sd: float
    is_normal: bool
    shapiro_p: float | None = None

    def to_dict(self) -> dict:
        return {"n": self.n, "mean": self.mean, "sd": self.sd,
                "is_normal": self.is_normal, "shapiro_p": self.shapiro_p}


@dataclass
class TestResult:
    test_kind: str            # "welch_t" | "mann_whitney"
    statistic: float
    p_value: float
    df: float | None = None   # fractional, Welch only

    def to_dict(self) -> dict:
        return {"test_kind": self.test_kind, "statistic": self.statistic,
                "p_value": self.p_value, "df": self.df}


class ShapiroResult(NamedTuple):
    statistic: float
    p_value: float


# Royston (1995) AS R94 polynomial coefficients, descending powers.
_C1 = (-2.706056, 4.434685, -2.071190, -0.147981, 0.221157, 0.0)
_C2 = (-3.582633, 5.682633, -1.752461, -0.293762, 0.042981, 0.0)
_C3 = (-0.0006714, 0.025054, -0.39978, 0.544)
_C4 = (-0.0020322, 0.062767, -0.77857, 1.3822)
_C5 = (0.0038915, -0.083751, -0.31082, -1.5861)
_C6 = (0.0030302, -0.082676, -0.4803)
_G = (0.459, -2.273)


def shapiro_wilk(sample) -> ShapiroResult:
    """Shapiro-Wilk W and its p-value via Royston's AS R94 approximation.

    Supports 3 <= n <= 5000.  Constant samples are degenerate (W undefined).
    """
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    if n < 3 or n > 5000:
        raise UnsupportedSizeError(f"Shapiro-Wilk supports 3 <= n <= 5000, got {n}")
    if x[-1] - x[0] <= 0:
        raise DegenerateSampleError("constant sample has no distributional shape")

    n2 = n // 2
    if n == 3:
        a = np.array([math.sqrt(0.5)])
    else:
        m = spstats.norm.ppf((np.arange(1, n2 + 1) - 0.375) / (n + 0.25))
        summ2 = 2.0 * float(m @ m)
        ssumm2 = math.sqrt(summ2)
        rsn = 1.0 / math.sqrt(n)
        a1 = np.polyval(_C1, rsn) - m[0] / ssumm2
        if n > 5:
            a2 = np.polyval(_C2, rsn) - m[1] / ssumm2
            fac = math.sqrt((summ2 - 2.0 * m[0] ** 2 - 2.0 * m[1] ** 2)
                            / (1.0 - 2.0 * a1 ** 2 - 2.0 * a2 ** 2))
            a = np.concatenate([[a1, a2], -m[2:] / fac])
        else:
            fac = math.sqrt((summ2 - 2.0 * m[0] ** 2) / (1.0 - 2.0 * a1 ** 2))
            a = np.concatenate([[a1], -m[1:] / fac])

    # Antisymmetric full-length weights: -a for the lower half, +a mirrored.
    weights = np.zeros(n)
    weights[:n2] = -a
    weights[n - n2:] = a[::-1]

    # 1 - W computed directly as (ssassx - sax)(ssassx + sax)/(ssa*ssx) to
    # avoid catastrophic cancellation when W is very near 1.
    xs = (x - x.mean()) / (x[-1] - x[0])
    ws = weights - weights.mean()
    ssx = float(xs @ xs)
    ssa = float(ws @ ws)
    sax = float(ws @ xs)
    ssassx = math.sqrt(ssa * ssx)
    w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx)
    w1 = min(max(w1, 0.0), 1.0)
    w = 1.0 - w1

    if n == 3:
        p = 1.909859 * (math.asin(math.sqrt(w)) - 1.047198)
        return ShapiroResult(w, min(max(p, 0.0), 1.0))

    if w1 <= 0.0:
        return ShapiroResult(1.0, 1.0)
    y = math.log(w1)
    if n <= 11:
        gamma = np.polyval(_G, n)
        if y >= gamma:
            return ShapiroResult(w, 1e-19)
        y = -math.log(gamma - y)
        mu = np.polyval(_C3, n)
        sigma = math.exp(np.polyval(_C4, n))
    else:
        ln_n = math.log(n)
        mu = np.polyval(_C5, ln_n)
        sigma = math.exp(np.polyval(_C6, ln_n))
    p = float(spstats.norm.sf((y - mu) / sigma))
    return ShapiroResult(w, p)


def describe(sample, alpha: float = NORMALITY_ALPHA) -> GroupSummary:
    x = np.asarray(sample, dtype=float)
    if x.size < 3:
        raise UnsupportedSizeError("need n >= 3 to screen normality")
    try:
        sw = shapiro_wilk(x)
        is_normal = sw.p_value >= alpha
        shapiro_p = sw.p_value
    except DegenerateSampleError:
        is_normal = False
        shapiro_p = None
    return GroupSummary(n=int(x.size), mean=float(x.mean()),
                        sd=float(x.std(ddof=1)), is_normal=is_normal,
                        shapiro_p=shapiro_p)


def welch_t(a, b) -> TestResult:
    """Unequal-variance two-sample t-test with Welch-Satterthwaite df."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise DomainError("each group needs at least 2 observations")
    va = a.var(ddof=1) / a.size
    vb = b.var(ddof=1) / b.size
    if va + vb == 0:
        raise DegenerateSampleError("both groups have zero variance")
    t = (a.mean() - b.mean()) / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    p = 2.0 * float(spstats.t.sf(abs(t), df))
    return TestResult("welch_t", float(t), min(p, 1.0), df=float(df))


def _u_counts(m: int, n: int) -> np.ndarray:
    """Null distribution counts of the U statistic for tie-free samples.

    counts[u] is the number of the C(m+n, m) rank arrangements with exactly
    that U value, built with the classic recurrence
    N(u; m, n) = N(u - n; m - 1, n) + N(u; m, n - 1).
    """
    table: dict[tuple[int, int], np.ndarray] = {}
    for mm in range(m + 1):
        for nn in range(n + 1):
            arr = np.zeros(mm * nn + 1)
            if mm == 0 or nn == 0:
                arr[0] = 1.0
            else:
                left = table[(mm - 1, nn)]
                arr[nn:nn + left.size] += left
                right = table[(mm, nn - 1)]
                arr[:right.size] += right
            table[(mm, nn)] = arr
    return table[(m, n)]


EXACT_MW_LIMIT = 400  # exact enumeration when n_a * n_b is at most this


def mann_whitney(a, b) -> TestResult:
    """Mann-Whitney U with midrank ties.

    The statistic is U of the first sample (number of (a, b) pairs with
    a > b, ties counting one half).  For tie-free data with n_a * n_b <=
    400 the two-sided p doubles the smaller exact tail (capped at 1);
    otherwise a tie-corrected normal approximation with continuity
    correction is used.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 1 or b.size < 1:
        raise DomainError("each group needs at least 1 observation")
    na, nb = a.size, b.size
    combined = np.concatenate([a, b])
    ranks = spstats.rankdata(combined)
    r_a = float(ranks[:na].sum())
    u = r_a - na * (na + 1) / 2.0

    _, tie_counts = np.unique(combined, return_counts=True)
    has_ties = bool(np.any(tie_counts > 1))

    if not has_ties and na * nb <= EXACT_MW_LIMIT:
        counts = _u_counts(na, nb)
        total = counts.sum()
        ui = int(round(u))
        lower = counts[:ui + 1].sum() / total
        upper = counts[ui:].sum() / total
        p = min(1.0, 2.0 * min(lower, upper))
        return TestResult("mann_whitney", float(u), float(p))

    mean_u = na * nb / 2.0
    n_tot = na + nb
    tie_term = float(np.sum(tie_counts**3 - tie_counts)) / (n_tot * (n_tot - 1))
    var_u = na * nb / 12.0 * ((n_tot + 1) - tie_term)
    if var_u <= 0:
        return TestResult("mann_whitney", float(u), 1.0)
    z = (abs(u - mean_u) - 0.5) / math.sqrt(var_u)
    z = max(z, 0.0)
    p = min(1.0, 2.0 * float(spstats.norm.sf(z)))
    return TestResult("mann_whitney", float(u), p)


def choose_and_test(a, b, alpha: float = NORMALITY_ALPHA) -> TestResult:
    """Welch t-test when both samples screen normal, Mann-Whitney otherwise.

    Groups too small to screen (n < 3), or degenerate for the screen, fall
    back to the nonparametric path.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)

    def screens_normal(x) -> bool:
        if x.size < 3:
            return False
        try:
            return shapiro_wilk(x).p_value >= alpha
        except DegenerateSampleError:
            return False

    if screens_normal(a) and screens_normal(b):
        return welch_t(a, b)
    return mann_whitney(a, b)


@dataclass
class PowerResult:
    n_control: int
    n_grid: np.ndarray
    power: np.ndarray
    target_power: float
    required_n_per_group: int | None
    detectable_difference: float

    def to_dict(self) -> dict:
        return {
            "n_control": self.n_control,
            "n_grid": self.n_grid.tolist(),
            "power": self.power.tolist(),
            "target_power": self.target_power,
            "required_n_per_group": self.required_n_per_group,
            "detectable_difference": self.detectable_difference,
        }


def welch_power(mu1: float, sd1: float, n1: int,
                mu2: float, sd2: float, n2: int,
                alpha: float = 0.05) -> float:
    """Power of the two-sided Welch test via the noncentral t distribution."""
    if not (sd1 > 0 and sd2 > 0):
        raise DomainError("standard deviations must be strictly positive")
    if n1 < 2 or n2 < 2:
        raise DomainError("each group needs n >= 2")
    v1, v2 = sd1**2 / n1, sd2**2 / n2
    se = math.sqrt(v1 + v2)
    nc = (mu1 - mu2) / se
    df = (v1 + v2) ** 2 / (v1**2 / (n1 - 1) + v2**2 / (n2 - 1))
    t_crit = float(spstats.t.ppf(1.0 - alpha / 2.0, df))
    return float(1.0 - spstats.nct.cdf(t_crit, df, nc)
                 + spstats.nct.cdf(-t_crit, df, nc))


def power_curve(mu1: float, sd1: float, n1_fixed: int,
                mu2: float, sd2: float,
                n2_grid: Sequence[int] | None = None,
                alpha: float = 0.05,
                target_power: float = 0.8) -> PowerResult:
    """Power of the patient-group size sweep with the control group fixed.

    Group 1 (mu1, sd1) is the fixed control group at n1_fixed; group 2
    (mu2, sd2) is swept over ``n2_grid``.
    """
    grid = np.asarray(n2_grid if n2_grid is not None else np.arange(2, 101), dtype=int)
    power = np.array([welch_power(mu1, sd1, n1_fixed, mu2, sd2, int(n2), alpha)
                      for n2 in grid])
    reaching = grid[power >= target_power]
    return PowerResult(
        n_control=n1_fixed,
        n_grid=grid,
        power=power,
        target_power=target_power,
        required_n_per_group=int(reaching[0]) if reaching.size else None,
        detectable_difference=abs(mu1 - mu2),
    )


def required_n(mu1: float, sd1: float, mu2: float, sd2: float,
               power: float = 0.8, alpha: float = 0.05,
               n_max: int = 10**6) -> int:
    """Smallest equal per-group n giving the two-sided Welch test the target power."""
    if mu1 == mu2:
        raise UnattainablePowerError("equal means: no sample size attains the target power")
    if not 0 < power < 1:
        raise DomainError("power must lie in (0, 1)")
    n = 2
    while welch_power(mu1, sd1, n, mu2, sd2, n, alpha) < power:
        n += 1
        if n > n_max:
            raise UnattainablePowerError(f"target power not reached by n = {n_max}")
    return n
