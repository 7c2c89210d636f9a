"""Statistical machinery for misuse audits.

Welch's unequal-variance t-test drives every decision in the toolkit. Tail
probabilities come from an in-house regularized incomplete beta function
(Lentz continued fraction, symmetry switch at x > (a+1)/(a+b+2), 200-iteration
cap at 1e-14 tolerance), so audits do not depend on an external statistics
stack and extreme tails can be reported in log space without underflow
ambiguity.

Conventions
-----------
* ``variance`` is always the unbiased sample variance (divide by n-1).
* ``WelchResult.p_one_sided`` is the upper tail P(T >= t), i.e. evidence that
  the first sample's mean exceeds the second's.
* Reference distributions carry an ``assumed_n`` because they are published as
  (mean, variance) pairs only; it is a config field, never baked into the math.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InvalidConfigError, InvalidInputError

_LN10 = math.log(10.0)

_BETA_MAX_ITER = 200
_BETA_EPS = 1e-14
_BETA_FPMIN = 1e-300


# --------------------------------------------------------------------------
# numeric kernel: regularized incomplete beta and Student-t tails
# --------------------------------------------------------------------------

def _beta_cf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta via modified Lentz."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETA_FPMIN:
        d = _BETA_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_FPMIN:
            d = _BETA_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETA_FPMIN:
            c = _BETA_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_FPMIN:
            d = _BETA_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETA_FPMIN:
            c = _BETA_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_EPS:
            break
    return h


def _ln_beta_front(a: float, b: float, x: float) -> float:
    """ln of the prefactor x^a (1-x)^b / B(a, b)."""
    return (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """I_x(a, b), the regularized incomplete beta function."""
    if a <= 0 or b <= 0:
        raise InvalidInputError("incomplete beta requires a > 0 and b > 0")
    if not 0.0 <= x <= 1.0:
        raise InvalidInputError(f"incomplete beta argument x={x} outside [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    front = math.exp(_ln_beta_front(a, b, x))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def log_regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """Natural log of I_x(a, b); stays finite where the value itself underflows."""
    if a <= 0 or b <= 0:
        raise InvalidInputError("incomplete beta requires a > 0 and b > 0")
    if not 0.0 <= x <= 1.0:
        raise InvalidInputError(f"incomplete beta argument x={x} outside [0, 1]")
    if x == 0.0:
        return -math.inf
    if x == 1.0:
        return 0.0
    if x < (a + 1.0) / (a + b + 2.0):
        return _ln_beta_front(a, b, x) + math.log(_beta_cf(a, b, x) / a)
    # the complement branch never represents a tiny value, so direct log is safe
    return math.log(regularized_incomplete_beta(x, a, b))


def t_tail(t: float, df: float) -> float:
    """Upper-tail probability P(T >= t) for Student's t with ``df`` degrees."""
    if not math.isfinite(t):
        raise InvalidInputError("t statistic must be finite")
    if not df > 0:
        raise InvalidInputError("degrees of freedom must be positive")
    x = df / (df + t * t)
    p_abs = 0.5 * regularized_incomplete_beta(x, 0.5 * df, 0.5)
    return p_abs if t >= 0 else 1.0 - p_abs


def log10_t_tail(t: float, df: float) -> float:
    """log10 of the upper tail; useful when p underflows double precision."""
    if not math.isfinite(t):
        raise InvalidInputError("t statistic must be finite")
    if not df > 0:
        raise InvalidInputError("degrees of freedom must be positive")
    x = df / (df + t * t)
    if t >= 0:
        log_p = math.log(0.5) + log_regularized_incomplete_beta(x, 0.5 * df, 0.5)
        return log_p / _LN10
    p_abs = 0.5 * regularized_incomplete_beta(x, 0.5 * df, 0.5)
    return math.log1p(-p_abs) / _LN10


# --------------------------------------------------------------------------
# summary statistics and Welch's test
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SummaryStats:
    """Sample mean, unbiased variance, and count. Needs n >= 2."""

    mean: float
    variance: float
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise InvalidInputError("summary statistics require n >= 2")
        if not math.isfinite(self.mean):
            raise InvalidInputError("mean must be finite")
        if not math.isfinite(self.variance) or self.variance < 0:
            raise InvalidInputError("variance must be finite and >= 0")


def summarize(values: Sequence[float]) -> SummaryStats:
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size < 2:
        raise InvalidInputError("need at least two observations to summarize")
    return SummaryStats(mean=float(arr.mean()), variance=float(arr.var(ddof=1)), n=int(arr.size))


class RunningStats:
    """Numerically stable online mean/variance (Welford's update).

    Under ``__debug__`` every read cross-checks against a batch recomputation
    of the retained values; production runs with ``python -O`` skip it.
    """

    def __init__(self):
        self.n = 0
        self._mean = 0.0
        self._m2 = 0.0
        self._values: list[float] = []

    def add(self, x: float) -> None:
        x = float(x)
        self.n += 1
        delta = x - self._mean
        self._mean += delta / self.n
        self._m2 += delta * (x - self._mean)
        self._values.append(x)

    @property
    def mean(self) -> float:
        return self._mean

    @property
    def variance(self) -> float:
        if self.n < 2:
            raise InvalidInputError("variance needs n >= 2")
        return self._m2 / (self.n - 1)

    def stats(self) -> SummaryStats:
        result = SummaryStats(mean=self._mean, variance=self.variance, n=self.n)
        if __debug__:
            batch = np.asarray(self._values)
            assert abs(batch.mean() - result.mean) < 1e-9 * max(1.0, abs(result.mean))
            assert abs(batch.var(ddof=1) - result.variance) < 1e-9 * max(1.0, result.variance)
        return result


@dataclass(frozen=True)
class WelchResult:
    """Welch's t-test outcome. ``degenerate`` marks the both-variances-zero case."""

    t: float
    df: float
    p_one_sided: float
    p_two_sided: float
    log10_p_one_sided: float
    degenerate: bool = False


def welch_test(a: SummaryStats, b: SummaryStats) -> WelchResult:
    """Unequal-variance t-test of ``a`` against ``b``.

    t is positive when ``a.mean > b.mean``; ``p_one_sided`` is the upper tail.
    Degrees of freedom follow the Welch–Satterthwaite approximation and always
    lie within [min(n1, n2) - 1, n1 + n2 - 2].
    """
    va_n = a.variance / a.n
    vb_n = b.variance / b.n
    se2 = va_n + vb_n
    df_cap = a.n + b.n - 2
    if se2 == 0.0:
        if a.mean == b.mean:
            return WelchResult(
                t=0.0, df=float(df_cap), p_one_sided=0.5, p_two_sided=1.0,
                log10_p_one_sided=math.log10(0.5), degenerate=True,
            )
        t = math.inf if a.mean > b.mean else -math.inf
        p_one = 0.0 if t > 0 else 1.0
        return WelchResult(
            t=t, df=float(df_cap), p_one_sided=p_one, p_two_sided=0.0,
            log10_p_one_sided=-math.inf if t > 0 else 0.0, degenerate=True,
        )
    t = (a.mean - b.mean) / math.sqrt(se2)
    denom = 0.0
    if va_n > 0:
        denom += va_n * va_n / (a.n - 1)
    if vb_n > 0:
        denom += vb_n * vb_n / (b.n - 1)
    df = se2 * se2 / denom
    p_one = t_tail(t, df)
    p_two = 2.0 * min(p_one, 1.0 - p_one)
    return WelchResult(
        t=t, df=df, p_one_sided=p_one, p_two_sided=p_two,
        log10_p_one_sided=log10_t_tail(t, df),
    )


# --------------------------------------------------------------------------
# reference distributions and deployment decisions
# --------------------------------------------------------------------------

DEFAULT_ASSUMED_N = 512


@dataclass(frozen=True)
class ReferenceDistribution:
    """Pre-characterized service behavior published as (mean, variance)."""

    label: str  # "clean" | "watermarked"
    method: str  # "acronym" | "spatial"
    mean: float
    variance: float
    assumed_n: int = DEFAULT_ASSUMED_N

    def __post_init__(self):
        if self.label not in ("clean", "watermarked"):
            raise InvalidInputError(f"unknown reference label {self.label!r}")
        if self.assumed_n < 2:
            raise InvalidInputError("assumed_n must be >= 2")
        if self.variance < 0:
            raise InvalidInputError("variance must be >= 0")

    def as_stats(self) -> SummaryStats:
        return SummaryStats(mean=self.mean, variance=self.variance, n=self.assumed_n)


REFERENCE_PRESETS: dict[str, tuple[ReferenceDistribution, ReferenceDistribution]] = {
    "acronym": (
        ReferenceDistribution("clean", "acronym", 0.005, 0.02),
        ReferenceDistribution("watermarked", "acronym", 0.6, 0.2),
    ),
    "spatial": (
        ReferenceDistribution("clean", "spatial", 0.2, 0.2),
        ReferenceDistribution("watermarked", "spatial", 0.55, 0.25),
    ),
}

DECISION_WATERMARKED = "uses-watermarked-data"
DECISION_CLEAN = "clean"
DECISION_INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class DeploymentResult:
    decision: str
    p_above_clean: float
    p_below_watermarked: float
    test_vs_clean: WelchResult
    test_vs_watermarked: WelchResult
    alpha: float


def deployment_test(
    suspect: SummaryStats,
    clean_ref: ReferenceDistribution,
    wm_ref: ReferenceDistribution,
    alpha: float,
) -> DeploymentResult:
    """Audit a suspect service against published clean/watermarked references.

    Two one-sided Welch tests run: the first null says the suspect stays below
    the clean baseline, the second that it stays above the watermarked one.
    Rejecting only the first means the suspect behaves like a watermarked
    service; rejecting only the second clears it; anything else is
    inconclusive.
    """
    if clean_ref.method != wm_ref.method:
        raise InvalidConfigError(
            f"reference methods differ: {clean_ref.method!r} vs {wm_ref.method!r}"
        )
    if clean_ref.label != "clean" or wm_ref.label != "watermarked":
        raise InvalidConfigError("references must be passed as (clean, watermarked)")
    if not 0.0 < alpha < 0.5:
        raise InvalidInputError("alpha must lie in (0, 0.5)")
    vs_clean = welch_test(suspect, clean_ref.as_stats())
    vs_wm = welch_test(suspect, wm_ref.as_stats())
    p_above_clean = vs_clean.p_one_sided
    if vs_wm.degenerate:
        p_below_wm = vs_wm.p_two_sided if suspect.mean < wm_ref.mean else 1.0 - vs_wm.p_one_sided
    else:
        p_below_wm = t_tail(-vs_wm.t, vs_wm.df)  # lower tail of suspect-vs-watermarked
    reject_below_clean = p_above_clean < alpha
    reject_above_wm = p_below_wm < alpha
    if reject_below_clean and not reject_above_wm:
        decision = DECISION_WATERMARKED
    elif reject_above_wm and not reject_below_clean:
        decision = DECISION_CLEAN
    else:
        decision = DECISION_INCONCLUSIVE
    return DeploymentResult(
        decision=decision,
        p_above_clean=p_above_clean,
        p_below_watermarked=p_below_wm,
        test_vs_clean=vs_clean,
        test_vs_watermarked=vs_wm,
        alpha=alpha,
    )


# --------------------------------------------------------------------------
# sequential auditing
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SequentialResult:
    decision: str
    queries_used: int
    p_trace: tuple[float, ...]
    suspect: SummaryStats | None


def sequential_audit(
    trial_fn: Callable[[object], int],
    probes: Iterable,
    clean_ref: ReferenceDistribution,
    alpha: float,
    max_queries: int,
    on_trial: Callable[[int, object, int, str | None], None] | None = None,
) -> SequentialResult:
    """Probe one query at a time, stopping at the first p < alpha.

    The running suspect statistics accumulate eval bits; once two trials exist,
    the one-sided suspect-above-clean p is recomputed after every trial and
    appended to ``p_trace``. Backend failures count as eval 0 (reported via
    ``on_trial``) and never abort the audit. Exhausting the probe stream or
    hitting ``max_queries`` without significance is an inconclusive outcome.
    """
    if max_queries < 2:
        raise InvalidInputError("max_queries must be >= 2")
    if not 0.0 < alpha < 0.5:
        raise InvalidInputError("alpha must lie in (0, 0.5)")
    running = RunningStats()
    p_trace: list[float] = []
    queries = 0
    clean_stats = clean_ref.as_stats()
    for probe in probes:
        if queries >= max_queries:
            break
        error: str | None = None
        try:
            bit = int(trial_fn(probe))
        except Exception as exc:  # failures are evidence of nothing; count 0
            bit = 0
            error = str(exc)
        queries += 1
        running.add(bit)
        if on_trial is not None:
            on_trial(queries, probe, bit, error)
        if running.n >= 2:
            result = welch_test(running.stats(), clean_stats)
            p_trace.append(result.p_one_sided)
            if result.p_one_sided < alpha:
                return SequentialResult(
                    decision=DECISION_WATERMARKED,
                    queries_used=queries,
                    p_trace=tuple(p_trace),
                    suspect=running.stats(),
                )
    suspect = running.stats() if running.n >= 2 else None
    return SequentialResult(
        decision=DECISION_INCONCLUSIVE,
        queries_used=queries,
        p_trace=tuple(p_trace),
        suspect=suspect,
    )


# --------------------------------------------------------------------------
# ROC curves
# --------------------------------------------------------------------------

def roc_points(
    clean_rates: Sequence[float],
    wm_rates: Sequence[float],
    thresholds: Sequence[float],
) -> list[tuple[float, float]]:
    """(FPR, TPR) per threshold: the fraction of clean / watermarked rates at
    or above each threshold, sorted by FPR ascending."""
    clean = np.asarray(list(clean_rates), dtype=np.float64)
    wm = np.asarray(list(wm_rates), dtype=np.float64)
    taus = np.asarray(list(thresholds), dtype=np.float64)
    if clean.size == 0 or wm.size == 0 or taus.size == 0:
        raise InvalidInputError("roc_points requires non-empty rates and thresholds")
    for name, arr in (("clean_rates", clean), ("wm_rates", wm)):
        if arr.min() < 0 or arr.max() > 1:
            raise InvalidInputError(f"{name} must lie in [0, 1]")
    if np.any(np.diff(taus) < 0):
        raise InvalidInputError("thresholds must be sorted ascending")
    points = []
    for tau in taus:
        fpr = float(np.mean(clean >= tau))
        tpr = float(np.mean(wm >= tau))
        points.append((fpr, tpr))
    return sorted(points)


# --------------------------------------------------------------------------
# PCA projection (orthogonal subspace iteration on the covariance operator)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PcaProjection:
    coordinates: np.ndarray  # (n, components)
    components: np.ndarray  # (components, dim), orthonormal rows
    explained_variance: np.ndarray  # (components,)
    degenerate: bool = False


def pca_project(vectors: Sequence, components: int = 2) -> PcaProjection:
    """Project mean-centered vectors onto their top principal directions.

    Directions come from orthogonal power iteration (QR-based subspace
    iteration) on the sample covariance matrix, started from a fixed-seed
    random basis so reordering the inputs changes nothing but row order.
    Identical inputs are a degenerate case: every projection is zero and the
    result is flagged.
    """
    X = np.asarray([np.asarray(v, dtype=np.float64).reshape(-1) for v in vectors])
    if X.ndim != 2 or X.shape[0] < 2:
        raise InvalidInputError("pca_project needs at least two vectors")
    n, dim = X.shape
    if not 1 <= components <= dim:
        raise InvalidInputError(f"components must lie in [1, {dim}]")
    if bool(np.all(X == X[0])):
        basis = np.zeros((components, dim))
        basis[np.arange(components), np.arange(components)] = 1.0
        return PcaProjection(
            coordinates=np.zeros((n, components)),
            components=basis,
            explained_variance=np.zeros(components),
            degenerate=True,
        )
    Xc = X - X.mean(axis=0)
    cov = (Xc.T @ Xc) / (n - 1)
    rng = np.random.Generator(np.random.PCG64(0x5EED))
    Q, _ = np.linalg.qr(rng.standard_normal((dim, components)))
    prev = np.zeros(components)
    for _ in range(1000):
        Z = cov @ Q
        Q, _ = np.linalg.qr(Z)
        eig = np.einsum("ij,ij->j", Q, cov @ Q)
        if np.max(np.abs(eig - prev)) <= 1e-12 * max(1.0, float(np.max(np.abs(eig)))):
            break
        prev = eig
    order = np.argsort(-eig)
    Q = Q[:, order]
    eig = eig[order]
    # deterministic sign: largest-magnitude coordinate of each direction is positive
    for j in range(components):
        col = Q[:, j]
        if col[int(np.argmax(np.abs(col)))] < 0:
            Q[:, j] = -col
    return PcaProjection(
        coordinates=Xc @ Q,
        components=Q.T.copy(),
        explained_variance=np.maximum(eig, 0.0),
        degenerate=False,
    )
