"""Critical values: chi-square quantiles, the CQLR conditional critical value
function with derivatives, and Monte Carlo conditional critical values.

The CQLR conditional CDF is ``G(x, r) = c_k * int_0^1 F_k(x(x+r)/(x+r u^2))
(1-u^2)^((k-3)/2) du`` with the normalizer ``c_k`` chosen so that
``G(inf, r) = 1``.  The substitution ``u = sin t`` removes the endpoint
singularity for every k >= 2 and leaves a smooth integrand on [0, pi/2],
evaluated by Gauss-Legendre quadrature with order doubling until the result
is stable to the requested tolerance.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc, gammaincinv, gammaln

from ivinvert.errors import NumericalError, QuadratureError

__all__ = [
    "CvfSpec",
    "McCvConfig",
    "chi2_quantile",
    "cqlr_cdf",
    "cqlr_cvf",
    "cqlr_cvf_derivs",
    "CvfHandle",
    "mc_conditional_cv",
    "draw_s_block",
]


@dataclass(frozen=True)
class CvfSpec:
    """Configuration for the CQLR critical value function."""

    k: int
    alpha: float = 0.05
    integration_tol: float = 1e-9
    bisect_tol: float = 1e-8

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 < self.alpha <= 0.5:
            raise ValueError("alpha must lie in (0, 0.5]")
        if self.integration_tol <= 0 or self.bisect_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class McCvConfig:
    """Monte Carlo settings for simulated conditional critical values."""

    draws: int = 10_000
    seed: int = 0
    common_random_numbers: bool = True

    def __post_init__(self):
        if self.draws < 1:
            raise ValueError("draws must be positive")


def chi2_quantile(k: int, alpha: float) -> float:
    """The (1 - alpha) quantile of chi-square with k degrees of freedom."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return 2.0 * float(gammaincinv(0.5 * k, 1.0 - alpha))


def _chi2_cdf(k: int, x):
    return gammainc(0.5 * k, 0.5 * np.asarray(x, dtype=float))


def _chi2_pdf(k: int, x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    hk = 0.5 * k
    out[pos] = np.exp((hk - 1.0) * np.log(x[pos]) - 0.5 * x[pos]
                      - hk * math.log(2.0) - gammaln(hk))
    return out


def _chi2_pdf_prime(k: int, x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    f = _chi2_pdf(k, x[pos])
    out[pos] = f * ((0.5 * k - 1.0) / x[pos] - 0.5)
    return out


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl_nodes(order: int):
    if order not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(order)
        # map [-1, 1] -> [0, pi/2]
        t = 0.25 * math.pi * (x + 1.0)
        _GL_CACHE[order] = (t, w * 0.25 * math.pi)
    return _GL_CACHE[order]


def _log_weight_norm(k: int) -> float:
    # int_0^{pi/2} cos^{k-2} t dt = sqrt(pi)/2 * Gamma((k-1)/2) / Gamma(k/2)
    return (0.5 * math.log(math.pi) - math.log(2.0)
            + gammaln(0.5 * (k - 1)) - gammaln(0.5 * k))


def _g_integrals(x, r, k, order, which=("g",)):
    """Normalized integrals of F_k and its partial derivatives at (x, r)."""
    t, w = _gl_nodes(order)
    u2 = np.sin(t) ** 2
    cosw = np.cos(t) ** max(k - 2, 0) * w
    norm = math.exp(_log_weight_norm(k))
    d = x + r * u2
    n = x * (x + r)
    y = n / d
    out = {}
    if "g" in which:
        out["g"] = float(np.sum(_chi2_cdf(k, y) * cosw) / norm)
    need_first = {"gx", "gr", "gxx", "gxr", "grr"} & set(which)
    if need_first:
        f = _chi2_pdf(k, y)
        y_x = ((2.0 * x + r) * d - n) / d**2
        y_r = x * x * (1.0 - u2) / d**2
        if "gx" in which:
            out["gx"] = float(np.sum(f * y_x * cosw) / norm)
        if "gr" in which:
            out["gr"] = float(np.sum(f * y_r * cosw) / norm)
        second = {"gxx", "gxr", "grr"} & set(which)
        if second:
            fp = _chi2_pdf_prime(k, y)
            a_num = (2.0 * x + r) * d - n  # numerator of y_x * d^2
            if "gxx" in which:
                y_xx = (2.0 * d * d - 2.0 * a_num) / d**3
                out["gxx"] = float(np.sum((fp * y_x**2 + f * y_xx) * cosw) / norm)
            if "gxr" in which:
                a_r = d + (2.0 * x + r) * u2 - x
                y_xr = (a_r * d - 2.0 * a_num * u2) / d**3
                out["gxr"] = float(np.sum((fp * y_x * y_r + f * y_xr) * cosw) / norm)
            if "grr" in which:
                c_num = x * d - n * u2
                y_rr = -2.0 * c_num * u2 / d**3
                out["grr"] = float(np.sum((fp * y_r**2 + f * y_rr) * cosw) / norm)
    return out


def cqlr_cdf(x: float, r: float, k: int, *, tol: float = 1e-9) -> float:
    """Conditional CDF of the QLR statistic given the rank statistic.

    ``r = 0`` collapses to the chi-square(k) CDF; k = 1 is the degenerate case
    where the statistic is chi-square(1) regardless of r.
    """
    if x < 0 or r < 0:
        raise ValueError("x and r must be nonnegative")
    if x == 0.0:
        return 0.0
    if k == 1 or r == 0.0:
        return float(_chi2_cdf(k, x))
    prev = None
    for order in (64, 128, 256, 512, 1024, 2048):
        val = _g_integrals(x, r, k, order)["g"]
        if prev is not None and abs(val - prev) <= tol:
            return min(max(val, 0.0), 1.0)
        prev = val
    raise QuadratureError(
        f"conditional CDF quadrature did not converge at (x={x}, r={r}, k={k})"
    )


def _stable_order(x, r, k, tol):
    prev = None
    for order in (64, 128, 256, 512, 1024, 2048):
        val = _g_integrals(x, r, k, order)["g"]
        if prev is not None and abs(val - prev) <= tol:
            return order
        prev = val
    raise QuadratureError("conditional CDF quadrature did not stabilize")


def cqlr_cvf(r: float, spec: CvfSpec) -> float:
    """The conditional critical value: kappa solving G(kappa, r) = 1 - alpha.

    Bisection runs between the (1-alpha) quantiles of chi-square(1) and
    chi-square(k), which bracket the CVF for every r >= 0.
    """
    if r < 0:
        raise ValueError("r must be nonnegative")
    c1 = chi2_quantile(1, spec.alpha)
    ck = chi2_quantile(spec.k, spec.alpha)
    if spec.k == 1:
        return c1
    if r == 0.0:
        return ck
    target = 1.0 - spec.alpha
    g_lo = cqlr_cdf(c1, r, spec.k, tol=spec.integration_tol)
    g_hi = cqlr_cdf(ck, r, spec.k, tol=spec.integration_tol)
    pad = 1e-9
    if g_lo > target + pad and g_hi > target:
        # r so large the CVF collapsed onto the lower bracket endpoint
        if g_lo <= target + 1e-6:
            return c1
        raise NumericalError("CVF bracket failure: G(c1, r) above target")
    if g_hi < target - pad:
        raise NumericalError("CVF bracket failure: G(ck, r) below target")
    lo, hi = c1, ck
    f_lo = g_lo - target
    while hi - lo > spec.bisect_tol:
        mid = 0.5 * (lo + hi)
        f_mid = cqlr_cdf(mid, r, spec.k, tol=spec.integration_tol) - target
        if f_mid == 0.0:
            return mid
        if (f_mid < 0) == (f_lo < 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def cqlr_cvf_derivs(r: float, spec: CvfSpec) -> tuple[float, float]:
    """First and second derivatives of the CVF by implicit differentiation.

    With ``G(kappa(r), r) = 1 - alpha``: ``kappa' = -G_r / G_x`` and
    ``kappa'' = -(G_xx kappa'^2 + 2 G_xr kappa' + G_rr) / G_x``, the partials
    computed by differentiating under the integral.
    """
    if spec.k < 2:
        raise ValueError("derivatives require k >= 2")
    if r < 0:
        raise ValueError("r must be nonnegative")
    kappa = cqlr_cvf(r, spec)
    if r == 0.0:
        # one-sided: lean on a tiny positive r for the conditioning partials
        r = 1e-8
    order = _stable_order(kappa, r, spec.k, spec.integration_tol)
    parts = _g_integrals(kappa, r, spec.k, min(2 * order, 2048),
                         which=("gx", "gr", "gxx", "gxr", "grr"))
    gx = parts["gx"]
    if gx <= 0.0:
        raise NumericalError("G_x <= 0: conditional CDF integration failed")
    d1 = -parts["gr"] / gx
    d2 = -(parts["gxx"] * d1 * d1 + 2.0 * parts["gxr"] * d1 + parts["grr"]) / gx
    return d1, d2


class CvfHandle:
    """Memoized access to the CVF and its first derivative for one (k, alpha).

    Exact values only; the sorted cache is used for bracketing hints, never
    returned in place of a fresh evaluation.
    """

    def __init__(self, spec: CvfSpec):
        self.spec = spec
        self._vals: dict[float, float] = {}
        self._deriv: dict[float, float] = {}
        self._sorted: list[float] = []
        self.c1 = chi2_quantile(1, spec.alpha)
        self.ck = chi2_quantile(spec.k, spec.alpha)

    def __call__(self, r: float) -> float:
        r = float(r)
        if r not in self._vals:
            self._vals[r] = cqlr_cvf(r, self.spec)
            bisect.insort(self._sorted, r)
        return self._vals[r]

    def derivative(self, r: float) -> float:
        r = float(r)
        if r not in self._deriv:
            self._deriv[r] = cqlr_cvf_derivs(r, self.spec)[0]
        return self._deriv[r]

    def hint(self, r: float) -> float:
        """Linear interpolation over cached values; bracketing hints only."""
        if not self._sorted:
            return 0.5 * (self.c1 + self.ck)
        xs = self._sorted
        i = bisect.bisect_left(xs, r)
        if i == 0:
            return self._vals[xs[0]]
        if i >= len(xs):
            return self._vals[xs[-1]]
        x0, x1 = xs[i - 1], xs[i]
        t = (r - x0) / (x1 - x0)
        return (1 - t) * self._vals[x0] + t * self._vals[x1]


_S_BLOCK_CACHE: dict[tuple[int, int, int], np.ndarray] = {}


def draw_s_block(seed: int, draws: int, k: int) -> np.ndarray:
    """The common-random-numbers standard normal block, cached per key."""
    key = (int(seed), int(draws), int(k))
    if key not in _S_BLOCK_CACHE:
        if len(_S_BLOCK_CACHE) > 32:
            _S_BLOCK_CACHE.clear()
        rng = np.random.default_rng(seed)
        _S_BLOCK_CACHE[key] = rng.standard_normal((draws, k))
    return _S_BLOCK_CACHE[key]


def mc_conditional_cv(test, beta0: float, T: np.ndarray, ss, cfg: McCvConfig,
                      alpha: float) -> float:
    """Empirical (1-alpha) quantile of a conditional statistic under the null.

    Draws ``S_j ~ N(0, I_k)`` (the same block across calls when common random
    numbers are on), reconstructs pseudo-data through the inverse S/T
    transform, evaluates ``test(beta0, S_j, T)`` for each draw, and returns the
    order statistic at index ``ceil((1 - alpha) * draws)``.
    """
    import warnings

    if cfg.draws < 1000:
        warnings.warn("fewer than 1000 draws; conditional quantile will be noisy",
                      stacklevel=2)
    k = ss.k
    if cfg.common_random_numbers:
        s_block = draw_s_block(cfg.seed, cfg.draws, k)
    else:
        rng = np.random.default_rng(cfg.seed)
        s_block = rng.standard_normal((cfg.draws, k))
    try:
        vals = np.asarray(test(beta0, s_block, T), dtype=float)
    except Exception as exc:
        raise NumericalError(
            f"conditional statistic evaluator failed on the draw block "
            f"(seed {cfg.seed}): {exc}"
        ) from exc
    if vals.shape != (cfg.draws,):
        raise ValueError("test must return one value per draw")
    bad = np.nonzero(~np.isfinite(vals))[0]
    if bad.size:
        raise NumericalError(
            f"conditional statistic evaluator returned non-finite values at "
            f"draw indices {bad[:5].tolist()} (seed {cfg.seed})"
        )
    order = np.sort(vals)
    idx = max(math.ceil((1.0 - alpha) * cfg.draws), 1)
    return float(order[idx - 1])
