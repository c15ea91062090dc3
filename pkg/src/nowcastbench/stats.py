"""Statistical characterization of rainfall series: zero inflation,
autocorrelation decay, unit-root (ADF) testing, and inter-variable
correlation structure.

The ADF regression is Δx_t on [1, t, x_{t-1}, Δx_{t-1..t-p}] with the lag
order picked by AIC; p-values come from the MacKinnon (1994) response-surface
approximation, with the surface coefficients embedded below as data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import TP_INDEX, VARIABLES


@dataclass(frozen=True)
class DecayFit:
    """Exponential fit rho(k) ~ exp(-lambda_hat * k) over positive lags."""

    lags: tuple[int, ...]
    rho: tuple[float, ...]
    lambda_hat: float
    fit_r2: float
    excluded: int  # non-positive autocorrelations dropped before fitting


@dataclass(frozen=True)
class AdfConfig:
    max_lag: int = 12
    include_trend: bool = True  # constant + linear trend regression
    significance: float = 0.05

    def __post_init__(self) -> None:
        if self.max_lag < 0:
            raise ValueError("max_lag must be nonnegative")
        if not 0 < self.significance < 1:
            raise ValueError("significance must lie in (0, 1)")


@dataclass(frozen=True)
class AdfResult:
    gamma_hat: float
    t_stat: float
    p_value: float
    lag_used: int
    n_obs: int


@dataclass(frozen=True)
class CorrelationMatrix:
    """Symmetric 6x6 matrix with unit diagonal; NaN marks entries that are
    undefined because a column is constant."""

    method: str
    matrix: np.ndarray
    defined: np.ndarray  # boolean mask, False where an entry is undefined


def zero_inflation_ratio(tp: np.ndarray) -> float:
    """Fraction of exactly-zero rainfall records."""
    x = np.asarray(tp, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty series")
    return float(np.count_nonzero(x == 0.0)) / x.size


def autocorrelation(x: np.ndarray, k: int) -> float:
    """Sample lag-k autocorrelation around the full-series mean."""
    v = np.asarray(x, dtype=np.float64)
    if k < 1 or len(v) <= k:
        raise ValueError("need len(x) > k >= 1")
    centered = v - v.mean()
    denom = float(centered @ centered)
    if denom <= 0.0:
        raise ValueError("constant series")
    return float(centered[:-k] @ centered[k:]) / denom


def fit_decay_lambda(rhos, lags=None) -> DecayFit:
    """Least-squares decay rate of -ln rho(k) against k through the origin.

    Non-positive autocorrelations carry no decay information on a log scale;
    they are excluded and counted.
    """
    rho = np.asarray(rhos, dtype=np.float64)
    kk = np.arange(1, len(rho) + 1) if lags is None else np.asarray(lags)
    if kk.shape != rho.shape:
        raise ValueError("lags and rhos must have equal length")
    keep = rho > 0
    excluded = int(np.count_nonzero(~keep))
    if np.count_nonzero(keep) < 2:
        raise ValueError("insufficient decay points")
    k = kk[keep].astype(np.float64)
    y = -np.log(rho[keep])
    lam = float((k @ y) / (k @ k))
    resid = y - lam * k
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(lags=tuple(int(v) for v in kk[keep]), rho=tuple(float(v) for v in rho[keep]),
                    lambda_hat=lam, fit_r2=r2, excluded=excluded)


# ---------------------------------------------------------------------------
# ADF unit-root test

# MacKinnon (1994) response-surface coefficients for the tau distribution,
# single-equation case. p = Phi(poly(tau)) inside the tabulated range;
# clamped to 0/1 outside. Rows: constant-only and constant+trend designs.
_MACKINNON = {
    "c": {
        "star": -1.61, "min": -18.83, "max": 2.74,
        "small": (2.1659, 1.4412, 3.8269e-2),
        "large": (1.7339, 9.3202e-1, -1.2745e-1, -1.0368e-2),
    },
    "ct": {
        "star": -2.89, "min": -16.18, "max": 0.7,
        "small": (3.2512, 1.6047, 4.9588e-2),
        "large": (2.5261, 6.1654e-1, -3.7956e-1, -6.0285e-2),
    },
}


def _norm_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def mackinnon_pvalue(t_stat: float, include_trend: bool = True) -> float:
    """Approximate p-value for an ADF tau statistic."""
    table = _MACKINNON["ct" if include_trend else "c"]
    if t_stat > table["max"]:
        return 1.0
    if t_stat < table["min"]:
        return 0.0
    coeffs = table["small"] if t_stat <= table["star"] else table["large"]
    poly = 0.0
    for degree, c in enumerate(coeffs):
        poly += c * t_stat**degree
    return _norm_cdf(poly)


def _ols(design: np.ndarray, target: np.ndarray):
    """QR least squares with coefficient standard errors and AIC."""
    n, k = design.shape
    if n <= k:
        raise ValueError("degenerate regression")
    q, r = np.linalg.qr(design)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise ValueError("degenerate regression")
    beta = np.linalg.solve(r, q.T @ target)
    resid = target - design @ beta
    ssr = float(resid @ resid)
    sigma2 = ssr / (n - k)
    rinv = np.linalg.solve(r, np.eye(k))
    cov = sigma2 * (rinv @ rinv.T)
    se = np.sqrt(np.diag(cov))
    aic = n * math.log(ssr / n) + 2 * k if ssr > 0 else -math.inf
    return beta, se, aic, ssr


def _adf_design(x: np.ndarray, lag: int, n_rows: int, include_trend: bool):
    """Regression pieces for Δx_t ~ const (+ trend) + x_{t-1} + Δx lags.

    The youngest ``n_rows`` observations are used so that candidate lag
    orders can be compared on a common sample.
    """
    dx = np.diff(x)
    total = len(dx)
    rows = np.arange(total - n_rows, total)
    target = dx[rows]
    cols = [np.ones(n_rows), ]
    if include_trend:
        cols.append(rows.astype(np.float64) + 1.0)
    level_col = x[rows]  # x_{t-1}: level lagged one step behind dx[t]
    cols.append(level_col)
    for j in range(1, lag + 1):
        cols.append(dx[rows - j])
    return np.column_stack(cols), target


def adf_test(segment: np.ndarray, cfg: AdfConfig = AdfConfig()) -> AdfResult:
    """Augmented Dickey-Fuller test with AIC lag selection.

    The null hypothesis is a unit root (gamma = 0); small p-values reject it
    in favour of stationarity.
    """
    x = np.asarray(segment, dtype=np.float64)
    n = len(x)
    if n <= cfg.max_lag + 4:
        raise ValueError("segment too short for the configured max_lag")
    if np.all(x == x[0]):
        raise ValueError("degenerate regression")
    n_common = (n - 1) - cfg.max_lag  # shared sample across candidate lags
    gamma_index = 2 if cfg.include_trend else 1
    best_lag, best_aic = 0, math.inf
    for lag in range(0, cfg.max_lag + 1):
        design, target = _adf_design(x, lag, n_common, cfg.include_trend)
        _, _, aic, _ = _ols(design, target)
        if aic < best_aic:
            best_aic, best_lag = aic, lag
    n_rows = (n - 1) - best_lag  # refit on the full usable sample
    design, target = _adf_design(x, best_lag, n_rows, cfg.include_trend)
    beta, se, _, _ = _ols(design, target)
    gamma = float(beta[gamma_index])
    t_stat = gamma / float(se[gamma_index])
    return AdfResult(
        gamma_hat=gamma,
        t_stat=t_stat,
        p_value=mackinnon_pvalue(t_stat, cfg.include_trend),
        lag_used=best_lag,
        n_obs=n_rows,
    )


# ---------------------------------------------------------------------------
# correlations


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties given their group-average rank."""
    order = np.argsort(x, kind="stable")
    sorted_x = x[order]
    boundary = np.empty(len(x), dtype=bool)
    boundary[0] = True
    boundary[1:] = sorted_x[1:] != sorted_x[:-1]
    group = np.cumsum(boundary) - 1
    counts = np.bincount(group)
    ends = np.cumsum(counts)
    starts = ends - counts
    avg = (starts + 1 + ends) / 2.0  # mean of rank range [start+1, end]
    ranks = np.empty(len(x))
    ranks[order] = avg[group]
    return ranks


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        return math.nan
    return float(xc @ yc) / denom


def _tie_pair_count(values: np.ndarray) -> int:
    _, counts = np.unique(values, return_counts=True)
    return int((counts * (counts - 1) // 2).sum())


def _kendall_pairs_blocked(x: np.ndarray, y: np.ndarray, block: int = 256) -> int:
    """Sum of sign(xi-xj)*sign(yi-yj) over i<j via a blocked pair scan."""
    n = len(x)
    total = 0
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        dx = np.sign(x[lo:hi, None] - x[None, hi:])
        dy = np.sign(y[lo:hi, None] - y[None, hi:])
        total += int((dx * dy).sum())
        bx = np.sign(x[lo:hi, None] - x[None, lo:hi])
        by = np.sign(y[lo:hi, None] - y[None, lo:hi])
        total += int(np.triu(bx * by, k=1).sum())
    return total


def _merge_count(y: np.ndarray) -> int:
    """Inversion count (strictly decreasing pairs) by bottom-up merge sort."""
    arr = y.copy()
    buf = np.empty_like(arr)
    n = len(arr)
    inversions = 0
    width = 1
    while width < n:
        for lo in range(0, n - width, 2 * width):
            mid = lo + width
            hi = min(lo + 2 * width, n)
            left, right = arr[lo:mid], arr[mid:hi]
            # pairs (a in left, b in right) with a > b are inverted
            inversions += int((len(left) - np.searchsorted(left, right, side="right")).sum())
            merged = np.concatenate((left, right))
            merged.sort(kind="stable")
            buf[lo:hi] = merged
            arr[lo:hi] = buf[lo:hi]
        width *= 2
    return inversions


def _kendall_tau_b(x: np.ndarray, y: np.ndarray, exact_threshold: int = 2048) -> float:
    """Tie-corrected Kendall tau-b.

    Exact O(n^2) pair scan at small n; merge-sort inversion counting above
    ``exact_threshold``. Both paths agree exactly (integer arithmetic).
    """
    n = len(x)
    n0 = n * (n - 1) // 2
    n1 = _tie_pair_count(x)
    n2 = _tie_pair_count(y)
    denom = math.sqrt(float(n0 - n1) * float(n0 - n2))
    if denom == 0.0:
        return math.nan
    if n <= exact_threshold:
        s = _kendall_pairs_blocked(x, y)
    else:
        order = np.lexsort((y, x))
        xs, ys = x[order], y[order]
        new_group = np.empty(n, dtype=bool)
        new_group[0] = True
        new_group[1:] = (xs[1:] != xs[:-1]) | (ys[1:] != ys[:-1])
        joint_counts = np.bincount(np.cumsum(new_group) - 1)
        n3 = int((joint_counts * (joint_counts - 1) // 2).sum())
        discordant = _merge_count(ys)
        comparable = n0 - n1 - n2 + n3
        s = comparable - 2 * discordant
    return s / denom


def correlation_matrix(data: np.ndarray, method: str) -> CorrelationMatrix:
    """Pairwise correlation over the 6 variables.

    pearson: product-moment; spearman: pearson on average ranks; kendall:
    tau-b with tie corrections. Entries involving constant columns are
    reported as NaN with ``defined=False`` rather than silently zero.
    """
    if method not in ("pearson", "kendall", "spearman"):
        raise ValueError(f"unknown correlation method: {method}")
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("data must be a T x D matrix")
    n, d = x.shape
    if n < 3:
        raise ValueError("need at least 3 rows")
    columns = [x[:, j] for j in range(d)]
    if method == "spearman":
        columns = [_average_ranks(c) for c in columns]
    matrix = np.eye(d)
    defined = np.ones((d, d), dtype=bool)
    for i in range(d):
        for j in range(i + 1, d):
            if method == "kendall":
                value = _kendall_tau_b(columns[i], columns[j])
            else:
                value = _pearson(columns[i], columns[j])
            matrix[i, j] = matrix[j, i] = value
            if math.isnan(value):
                defined[i, j] = defined[j, i] = False
    return CorrelationMatrix(method=method, matrix=matrix, defined=defined)


def analyze_station(data: np.ndarray, decay_lags: int = 24,
                    adf_cfg: AdfConfig = AdfConfig()) -> dict:
    """Full property report for one aligned station matrix (T x 6)."""
    x = np.asarray(data, dtype=np.float64)
    tp = x[:, TP_INDEX]
    report: dict = {"zero_inflation": zero_inflation_ratio(tp)}

    try:
        rhos = [autocorrelation(tp, k) for k in range(1, decay_lags + 1)]
        decay = fit_decay_lambda(rhos)
        report["decay"] = {"lambda": decay.lambda_hat, "r2": decay.fit_r2,
                           "excluded": decay.excluded}
    except ValueError as exc:
        report["decay"] = {"error": str(exc)}

    try:
        adf = adf_test(tp, adf_cfg)
        report["adf"] = {"t": adf.t_stat, "p": adf.p_value, "lag": adf.lag_used}
    except ValueError as exc:
        report["adf"] = {"error": str(exc)}

    report["correlations"] = {}
    for method in ("pearson", "kendall", "spearman"):
        cm = correlation_matrix(x, method)
        cells = [[None if not cm.defined[i, j] else float(cm.matrix[i, j])
                  for j in range(len(VARIABLES))] for i in range(len(VARIABLES))]
        report["correlations"][method] = cells
    return report
