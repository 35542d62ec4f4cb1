"""Polynomial and rational-function algebra.

Provides the numerical primitives the inversion pipeline is built on:

* :class:`Poly` — a polynomial in either monomial or Chebyshev form.  Monomial
  form is the default at moderate degrees; Chebyshev form (with an explicit
  domain) is used for high-degree work where monomial coefficients are not
  representable stably in double precision.
* :class:`RationalFn` — a ratio of two :class:`Poly` of the same form, with a
  declared anchor point where the denominator is normalized to one.
* :func:`real_roots` / :func:`cheb_roots` — companion- and colleague-matrix
  root enumeration with polishing.
* :func:`fit_rational` — coefficient recovery of an exactly rational evaluator
  by sampling and solving a linear system, with a held-out residual check.
* :func:`solve_rational_inequality` — the exact sub-level set of a rational
  function as an :class:`~ivinvert.setops.IntervalUnion`.
* :func:`cheb_interpolate` / :func:`ChebBasis` — interpolation through
  Chebyshev points of the second kind.
* :func:`blackbox_real_roots` — recursive-subdivision rootfinder for smooth
  vectorized functions, used where explicit coefficient algebra would be
  numerically wasteful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import numpy.polynomial.chebyshev as npc
import numpy.polynomial.polynomial as npp

from ivinvert.errors import FitError, RootFindingError
from ivinvert.setops import IntervalUnion

__all__ = [
    "Poly",
    "RationalFn",
    "ChebBasis",
    "cheb_nodes",
    "cheb_interpolate",
    "cheb_roots",
    "real_roots",
    "fit_rational",
    "solve_rational_inequality",
    "blackbox_real_roots",
]

# Roots closer than this (relative) are collapsed; companion eigenvalues of
# perturbed real roots carry imaginary parts up to the imag tolerance.
_DEDUP_TOL = 1e-8
_IMAG_TOL = 1e-7
_TRIM_REL = 1e-12


def _trim_coeffs(c, rel=_TRIM_REL):
    c = np.atleast_1d(np.asarray(c, dtype=float))
    top = np.max(np.abs(c)) if c.size else 0.0
    if top == 0.0:
        return np.zeros(1)
    keep = np.nonzero(np.abs(c) > rel * top)[0]
    if keep.size == 0:
        return np.zeros(1)
    return c[: keep[-1] + 1].copy()


@dataclass(frozen=True)
class Poly:
    """Polynomial with ascending coefficients in monomial or Chebyshev form.

    ``form="mono"`` stores plain power-basis coefficients.  ``form="cheb"``
    stores Chebyshev-T coefficients over ``domain``; evaluation maps the
    argument affinely onto [-1, 1] first.  Degree follows the trailing-nonzero
    convention.
    """

    coeffs: np.ndarray
    form: str = "mono"
    domain: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        if c.ndim != 1 or c.size == 0:
            raise ValueError("coeffs must be a nonempty 1-D array")
        if self.form not in ("mono", "cheb"):
            raise ValueError(f"unknown polynomial form {self.form!r}")
        object.__setattr__(self, "coeffs", c)

    # -- construction helpers --

    @classmethod
    def zero(cls, form="mono", domain=(-1.0, 1.0)) -> "Poly":
        return cls(np.zeros(1), form, domain)

    @property
    def degree(self) -> int:
        return len(_trim_coeffs(self.coeffs)) - 1

    @property
    def is_zero(self) -> bool:
        return bool(np.all(self.coeffs == 0.0))

    def _map(self, x):
        a, b = self.domain
        return (2.0 * np.asarray(x, dtype=float) - (a + b)) / (b - a)

    def __call__(self, x):
        if self.form == "mono":
            return npp.polyval(np.asarray(x, dtype=float), self.coeffs)
        return npc.chebval(self._map(x), self.coeffs)

    def derivative(self) -> "Poly":
        if self.form == "mono":
            c = npp.polyder(self.coeffs) if len(self.coeffs) > 1 else np.zeros(1)
            return Poly(c, "mono", self.domain)
        a, b = self.domain
        c = npc.chebder(self.coeffs) if len(self.coeffs) > 1 else np.zeros(1)
        return Poly(c * (2.0 / (b - a)), "cheb", self.domain)

    def trimmed(self, rel=_TRIM_REL) -> "Poly":
        return Poly(_trim_coeffs(self.coeffs, rel), self.form, self.domain)

    def _compat(self, other: "Poly"):
        if self.form != other.form or (
            self.form == "cheb" and self.domain != other.domain
        ):
            raise ValueError("polynomial forms/domains are incompatible")

    def __add__(self, other: "Poly") -> "Poly":
        self._compat(other)
        fn = npc.chebadd if self.form == "cheb" else npp.polyadd
        return Poly(fn(self.coeffs, other.coeffs), self.form, self.domain)

    def __sub__(self, other: "Poly") -> "Poly":
        self._compat(other)
        fn = npc.chebsub if self.form == "cheb" else npp.polysub
        return Poly(fn(self.coeffs, other.coeffs), self.form, self.domain)

    def __mul__(self, other):
        if isinstance(other, Poly):
            self._compat(other)
            fn = npc.chebmul if self.form == "cheb" else npp.polymul
            return Poly(fn(self.coeffs, other.coeffs), self.form, self.domain)
        return Poly(self.coeffs * float(other), self.form, self.domain)

    __rmul__ = __mul__

    def scale_by(self, c: float) -> "Poly":
        return Poly(self.coeffs * c, self.form, self.domain)

    def to_mono(self) -> "Poly":
        """Convert to monomial form.  Lossy above degree ~40; use with care."""
        if self.form == "mono":
            return self
        a, b = self.domain
        # chebval composition: coefficients of T_j((2x - (a+b)) / (b - a)).
        line = np.array([-(a + b) / (b - a), 2.0 / (b - a)])
        c = npc.cheb2poly(self.coeffs)
        out = np.zeros(1)
        for ck in c[::-1]:
            out = npp.polyadd(npp.polymul(out, line), [ck])
        return Poly(out, "mono")


@dataclass(frozen=True)
class RationalFn:
    """Ratio of two polynomials of the same form, normalized at an anchor point.

    The stored denominator satisfies ``den(anchor) == 1``; the value is
    ``num(x) / den(x)`` wherever the denominator does not vanish.
    """

    num: Poly
    den: Poly
    anchor: float = 0.0

    def __post_init__(self):
        self.num._compat(self.den)
        if self.den.is_zero:
            raise ValueError("denominator is identically zero")
        c = float(self.den(self.anchor))
        if c == 0.0 or not math.isfinite(c):
            raise ValueError("denominator vanishes at the anchor point")
        if c != 1.0:
            object.__setattr__(self, "num", self.num.scale_by(1.0 / c))
            object.__setattr__(self, "den", self.den.scale_by(1.0 / c))

    def __call__(self, x):
        return self.num(x) / self.den(x)

    def boundary_poly(self, threshold: float) -> Poly:
        """num - threshold * den; its real roots are sub-level-set boundaries."""
        return (self.num - self.den.scale_by(threshold)).trimmed()

    @property
    def degrees(self) -> tuple[int, int]:
        return (self.num.degree, self.den.degree)

    def derivative(self) -> "RationalFn":
        dn = self.num.derivative() * self.den - self.num * self.den.derivative()
        return RationalFn(dn, self.den * self.den, self.anchor)

    def limit_at_infinity(self) -> float:
        """Limit as |x| -> inf when deg num <= deg den (same limit both sides
        for equal degrees; zero when the numerator degree is smaller)."""
        p, q = self.num.trimmed(), self.den.trimmed()
        if p.degree > q.degree:
            return math.inf
        if p.degree < q.degree:
            return 0.0
        if p.form == "mono":
            return p.coeffs[-1] / q.coeffs[-1]
        return p.coeffs[p.degree] / q.coeffs[q.degree]


@dataclass(frozen=True)
class FactoredRational(RationalFn):
    """Rational function kept as products of polynomial factors.

    ``num`` and ``den`` hold the expanded coefficient forms for root
    enumeration, where scale-relative coefficient noise only perturbs roots
    benignly.  Values, in contrast, are always computed from the factors:
    expanding products like ``num_p**2`` squares the dynamic range of the
    coefficients and destroys pointwise relative accuracy at small values,
    which is exactly where the sub-level-set membership tests look.
    """

    num_factors: tuple = ()
    den_factors: tuple = ()

    def __call__(self, x):
        if not self.num_factors:
            return self.num(x) / self.den(x)
        num = np.ones_like(np.asarray(x, dtype=float))
        for f in self.num_factors:
            num = num * f(x)
        den = np.ones_like(num)
        for f in self.den_factors:
            den = den * f(x)
        return num / den


# ---------------------------------------------------------------------------
# Chebyshev interpolation machinery
# ---------------------------------------------------------------------------


def cheb_nodes(degree: int, domain=(-1.0, 1.0)) -> np.ndarray:
    """Chebyshev points of the second kind, ascending, endpoints included."""
    if degree < 1:
        return np.array([0.5 * (domain[0] + domain[1])])
    j = np.arange(degree + 1)
    t = -np.cos(np.pi * j / degree)
    t[0], t[-1] = -1.0, 1.0
    a, b = domain
    return 0.5 * (a + b) + 0.5 * (b - a) * t


@dataclass(frozen=True)
class ChebBasis:
    """Samples of a function at second-kind Chebyshev nodes on [-1, 1]."""

    degree: int
    node_values: np.ndarray
    nodes: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        nodes = cheb_nodes(self.degree)
        vals = np.asarray(self.node_values, dtype=float)
        if vals.shape != nodes.shape:
            raise ValueError(
                f"node_values has shape {vals.shape}, expected {nodes.shape}"
            )
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "node_values", vals)

    @classmethod
    def from_function(cls, fun, degree: int) -> "ChebBasis":
        nodes = cheb_nodes(degree)
        return cls(degree, np.asarray(fun(nodes), dtype=float))


def _vals2coeffs(vals_ascending: np.ndarray) -> np.ndarray:
    """Chebyshev coefficients of the interpolant through second-kind points.

    ``vals_ascending[j]`` is the value at ``-cos(pi j / N)``; FFT-based, O(N log N).
    """
    v = np.asarray(vals_ascending, dtype=float)
    n = v.size - 1
    if n == 0:
        return v.copy()
    vd = v[::-1]  # values at cos(pi j / N), j = 0..N
    ext = np.concatenate([vd, vd[-2:0:-1]])
    c = np.real(np.fft.ifft(ext))
    a = c[: n + 1].copy()
    a[1:n] *= 2.0
    return a


def cheb_interpolate(samples: ChebBasis, domain=(-1.0, 1.0)) -> Poly:
    """The unique degree-<=N interpolant through second-kind nodes, Chebyshev form."""
    vals = samples.node_values
    if not np.all(np.isfinite(vals)):
        raise ValueError("node values must be finite")
    return Poly(_vals2coeffs(vals), "cheb", tuple(domain))


# ---------------------------------------------------------------------------
# Root finding
# ---------------------------------------------------------------------------


def _accept_real(roots: np.ndarray, imag_tol=_IMAG_TOL) -> np.ndarray:
    if roots.size == 0:
        return np.array([])
    keep = np.abs(roots.imag) <= imag_tol * (1.0 + np.abs(roots.real))
    return np.sort(roots.real[keep])


def _dedup_sorted(xs: np.ndarray, tol=_DEDUP_TOL) -> np.ndarray:
    if xs.size <= 1:
        return xs
    out = [xs[0]]
    for x in xs[1:]:
        if x - out[-1] > tol * (1.0 + abs(x)):
            out.append(x)
    return np.array(out)


def _polish_root(p: Poly, dp: Poly, x0: float, steps: int = 8) -> float:
    """Damped Newton polish; keeps the best iterate by |p|."""
    x, best, best_val = x0, x0, abs(float(p(x0)))
    for _ in range(steps):
        d = float(dp(x))
        if d == 0.0 or not math.isfinite(d):
            break
        step = float(p(x)) / d
        if not math.isfinite(step):
            break
        if abs(step) > 0.1 * (1.0 + abs(x)):
            step = math.copysign(0.1 * (1.0 + abs(x)), step)
        x = x - step
        v = abs(float(p(x)))
        if v < best_val:
            best, best_val = x, v
        if abs(step) <= 1e-15 * (1.0 + abs(x)):
            break
    return best


def _all_roots(p: Poly) -> np.ndarray:
    c = _trim_coeffs(p.coeffs)
    if len(c) <= 1:
        return np.array([], dtype=complex)
    if p.form == "mono":
        return npp.polyroots(c)
    t_roots = npc.chebroots(c)
    a, b = p.domain
    return 0.5 * (a + b) + 0.5 * (b - a) * t_roots


def real_roots(p: Poly, domain=(-math.inf, math.inf), imag_tol=_IMAG_TOL) -> np.ndarray:
    """All real roots of ``p`` inside ``domain``, ascending, multiplicities collapsed.

    Roots come from balanced companion-matrix (or colleague-matrix) eigenvalues;
    near-real eigenvalues are accepted, polished by Newton steps, deduplicated,
    and clipped to the requested domain.
    """
    p = p.trimmed()
    if p.is_zero:
        raise ValueError("cannot enumerate roots of the zero polynomial")
    if p.degree == 0:
        return np.array([])
    try:
        cand = _accept_real(_all_roots(p), imag_tol)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - eigen failure
        raise RootFindingError(
            f"eigen solver failed for polynomial of degree {p.degree}"
        ) from exc
    if cand.size == 0:
        return cand
    dp = p.derivative()
    polished = np.array([_polish_root(p, dp, x) for x in cand])
    polished.sort()
    lo, hi = domain
    edge = 1e-9
    sel = polished[
        (polished >= lo - edge * (1.0 + abs(lo)))
        & (polished <= hi + edge * (1.0 + abs(hi)))
    ]
    sel = np.clip(sel, lo, hi)
    return _dedup_sorted(sel)


def cheb_roots(p: Poly, refine: bool = True) -> np.ndarray:
    """Real roots of a Chebyshev-form polynomial inside its own domain.

    Colleague-matrix eigenvalues, then bisection refinement on any sign
    bracket the evaluation exposes around each candidate.
    """
    if p.form != "cheb":
        raise ValueError("cheb_roots expects a Chebyshev-form polynomial")
    p = p.trimmed()
    if p.is_zero:
        raise ValueError("cannot enumerate roots of the zero polynomial")
    if p.degree == 0:
        return np.array([])
    a, b = p.domain
    cand = _accept_real(_all_roots(p))
    edge = 1e-9 * (1.0 + max(abs(a), abs(b)))
    cand = cand[(cand >= a - edge) & (cand <= b + edge)]
    cand = np.clip(cand, a, b)
    if refine and cand.size:
        h = 1e-7 * (b - a)
        out = []
        for x in cand:
            lo, hi = max(a, x - h), min(b, x + h)
            flo, fhi = float(p(lo)), float(p(hi))
            if flo == 0.0:
                out.append(lo)
            elif fhi == 0.0:
                out.append(hi)
            elif flo * fhi < 0:
                out.append(_bisect(lambda t: float(p(t)), lo, hi, 1e-15 * (b - a)))
            else:
                out.append(x)  # tangency or already converged
        cand = np.array(sorted(out))
    return _dedup_sorted(cand, tol=1e-12)


def _bisect(f, lo, hi, xtol, flo=None, max_iter=200):
    flo = f(lo) if flo is None else flo
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= xtol:
            return mid
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (flo < 0) == (fm < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def blackbox_real_roots(
    fun,
    lo: float,
    hi: float,
    *,
    coeff_tol: float = 5e-14,
    max_degree: int = 512,
    max_depth: int = 30,
    _depth: int = 0,
) -> np.ndarray:
    """Real roots of a smooth vectorized function on [lo, hi].

    Interpolates at second-kind Chebyshev points with degree doubling until the
    trailing coefficients fall below ``coeff_tol`` relative to the largest, then
    takes colleague-matrix roots; if the function is not resolved at
    ``max_degree`` the interval is subdivided recursively.  Candidates are
    polished by bisection where a sign bracket exists.
    """
    if hi - lo <= 1e-14 * (1.0 + abs(lo) + abs(hi)):
        return np.array([])
    degrees, prev_vals = [16, 32, 64, 128, 256, 512], None
    for deg in degrees:
        if deg > max_degree:
            break
        nodes = cheb_nodes(deg, (lo, hi))
        if prev_vals is not None and deg == 2 * (len(prev_vals) - 1):
            vals = np.empty(deg + 1)
            vals[::2] = prev_vals
            vals[1::2] = np.asarray(fun(nodes[1::2]), dtype=float)
        else:
            vals = np.asarray(fun(nodes), dtype=float)
        prev_vals = vals
        if not np.all(np.isfinite(vals)):
            raise RootFindingError("non-finite values in blackbox root search")
        coeffs = _vals2coeffs(vals)
        scale = np.max(np.abs(coeffs))
        if scale == 0.0:
            return np.array([])
        tail = np.max(np.abs(coeffs[-2:]))
        if tail <= coeff_tol * scale:
            poly = Poly(coeffs, "cheb", (lo, hi)).trimmed(rel=coeff_tol)
            if poly.degree == 0:
                return np.array([])
            roots = cheb_roots(poly, refine=False)
            return _polish_blackbox(fun, roots, lo, hi)
    if _depth >= max_depth:
        poly = Poly(coeffs, "cheb", (lo, hi)).trimmed(rel=coeff_tol)
        roots = cheb_roots(poly, refine=False) if poly.degree > 0 else np.array([])
        return _polish_blackbox(fun, roots, lo, hi)
    # Split slightly off-center so a root at the midpoint cannot hide the split.
    mid = lo + (hi - lo) * 0.5000000001
    left = blackbox_real_roots(
        fun, lo, mid, coeff_tol=coeff_tol, max_degree=max_degree,
        max_depth=max_depth, _depth=_depth + 1,
    )
    right = blackbox_real_roots(
        fun, mid, hi, coeff_tol=coeff_tol, max_degree=max_degree,
        max_depth=max_depth, _depth=_depth + 1,
    )
    return _dedup_sorted(np.sort(np.concatenate([left, right])))


def _polish_blackbox(fun, roots, lo, hi):
    if roots.size == 0:
        return roots
    h = 1e-7 * (hi - lo)
    out = []
    for x in roots:
        a, b = max(lo, x - h), min(hi, x + h)
        fa, fb = float(fun(np.array([a]))[0]), float(fun(np.array([b]))[0])
        if fa * fb < 0:
            out.append(_bisect(lambda t: float(fun(np.array([t]))[0]), a, b,
                               1e-14 * (1.0 + abs(x)), flo=fa))
        else:
            out.append(x)
    return _dedup_sorted(np.array(sorted(out)))


# ---------------------------------------------------------------------------
# Rational coefficient recovery
# ---------------------------------------------------------------------------


def _heldout_points(scale: float, count: int = 64) -> np.ndarray:
    # Strictly between the fitting nodes: odd-index nodes of a finer grid.
    return cheb_nodes(2 * count + 1, (-scale, scale))[1::2][:count]


def fit_rational(
    evaluator,
    deg_num: int,
    deg_den: int,
    anchor: float = 0.0,
    scale: float = 10.0,
    *,
    heldout_tol: float = 1e-8,
    max_retries: int = 4,
) -> RationalFn:
    """Recover ``p/q`` from an exactly rational evaluator by linear solve.

    Samples the evaluator at ``deg_num + deg_den + 1`` Chebyshev points on
    ``[-scale, scale]``, solves the linearized system ``f(x) q(x) - p(x) = 0``
    with ``q(anchor) = 1``, and verifies ``|p/q - f| <= heldout_tol * (1 + |f|)``
    at 64 held-out points.  Failure retries at doubled sampling scale (with
    oversampling); persistent failure raises :class:`FitError` with the worst
    residual and a condition estimate.

    When the stated degrees overestimate the true ones, the linear system is
    rank deficient and naive solutions carry spurious pole-zero pairs.  The
    solve therefore works through the SVD of the homogeneous system and walks
    a degree-reduction ladder, keeping the smallest degrees that still pass
    the held-out check.

    The returned polynomials are in Chebyshev form over the sampling interval,
    converted to monomial form when the degrees are low enough for that to be
    exact in double precision.
    """
    if deg_num < 0 or deg_den < 0:
        raise ValueError("degrees must be nonnegative")
    s = float(scale)
    worst_seen, cond = math.inf, math.nan
    for attempt in range(max_retries):
        oversample = 2 if attempt > 0 else 1
        try:
            rf, worst, cond = _fit_once(
                evaluator, deg_num, deg_den, anchor, s, oversample, heldout_tol
            )
        except (np.linalg.LinAlgError, FitError):
            rf, worst = None, math.inf
        worst_seen = min(worst_seen, worst)
        if rf is not None:
            return rf
        s *= 2.0
    raise FitError(
        f"rational fit at degrees ({deg_num},{deg_den}) failed the held-out "
        f"residual check: worst relative residual {worst_seen:.3e} "
        f"(condition estimate {cond:.3e})"
    )


def _eval_finite(evaluator, xs):
    """Evaluate, nudging any node that lands on a pole or invalid point."""
    xs = np.array(xs, dtype=float)
    vals = np.asarray(evaluator(xs), dtype=float)
    bad = ~np.isfinite(vals)
    tries = 0
    while np.any(bad) and tries < 6:
        xs[bad] = xs[bad] + (1e-6 + 1e-4 * tries) * (1.0 + np.abs(xs[bad]))
        vals[bad] = np.asarray(evaluator(xs[bad]), dtype=float)
        bad = ~np.isfinite(vals)
        tries += 1
    if np.any(bad):
        raise FitError("evaluator returned non-finite values at sampling nodes")
    return xs, vals


def _fit_once(evaluator, deg_num, deg_den, anchor, s, oversample, heldout_tol):
    # Twice the minimal sample count: the least-squares average over extra
    # nodes separates the genuine nullspace from noise directions when the
    # stated degrees sit near a degeneracy (e.g. nearly-Kronecker covariance).
    n_samples = 2 * oversample * (deg_num + deg_den + 1)
    xs = cheb_nodes(max(n_samples - 1, 1), (-s, s))[:n_samples]
    if n_samples == 1:
        xs = np.array([0.0])
    xs, f = _eval_finite(evaluator, xs)
    t = xs / s
    vn = npc.chebvander(t, deg_num)
    vd = npc.chebvander(t, deg_den)
    w = 1.0 / (1.0 + np.abs(f))
    cols_p = vn * w[:, None]
    cols_q = -(f * w)[:, None] * vd
    heldout = _heldout_samples(evaluator, s)

    # Numerical nullspace dimension at the full degrees bounds how far the true
    # degrees may sit below the requested ones.
    svals = np.linalg.svd(np.hstack([cols_p, cols_q]), compute_uv=False)
    cond = svals[0] / svals[-1] if svals[-1] > 0 else math.inf
    near_null = int(np.sum(svals <= 1e-8 * svals[0]))
    r_max = min(max(near_null - 1, 0), deg_num, deg_den)

    best, best_worst = None, math.inf
    for r in range(r_max, -1, -1):
        dn, dd = deg_num - r, deg_den - r
        a_mat = np.hstack([cols_p[:, : dn + 1], cols_q[:, : dd + 1]])
        _, _, vt = np.linalg.svd(a_mat, full_matrices=True)
        sol = vt[-1]
        p = Poly(sol[: dn + 1], "cheb", (-s, s)).trimmed()
        q = Poly(sol[dn + 1 :], "cheb", (-s, s)).trimmed()
        if q.is_zero:
            continue
        qa = float(q(anchor))
        if abs(qa) < 1e-10 * float(np.max(np.abs(q.coeffs))):
            continue
        rf = RationalFn(p, q, anchor)
        worst = _heldout_residual(rf, heldout)
        if worst <= heldout_tol:
            return _prefer_mono(rf, heldout, worst, deg_num, deg_den, anchor), worst, cond
        if worst < best_worst:
            best, best_worst = rf, worst
    return None, best_worst, cond


def _prefer_mono(rf, heldout, worst, deg_num, deg_den, anchor):
    if max(deg_num, deg_den) > 40:
        return rf
    try:
        rf_mono = RationalFn(
            rf.num.to_mono().trimmed(), rf.den.to_mono().trimmed(), anchor
        )
        if _heldout_residual(rf_mono, heldout) <= max(worst, 1e-12) * 2.0 + 1e-14:
            return rf_mono
    except (ValueError, FloatingPointError):
        pass
    return rf


def _heldout_samples(evaluator, s):
    xs = _heldout_points(s)
    f = np.asarray(evaluator(xs), dtype=float)
    ok = np.isfinite(f)
    return xs[ok], f[ok]


def _heldout_residual(rf: RationalFn, heldout) -> float:
    xs, f = heldout
    if xs.size == 0:
        return math.inf
    approx = rf(xs)
    return float(np.max(np.abs(approx - f) / (1.0 + np.abs(f))))


# ---------------------------------------------------------------------------
# Rational inequality
# ---------------------------------------------------------------------------


def solve_rational_inequality(
    f: RationalFn,
    threshold: float,
    domain=(-math.inf, math.inf),
) -> IntervalUnion:
    """The exact set ``{x in domain : f(x) <= threshold}`` as an interval union.

    Boundary candidates are the real roots of ``num - threshold * den`` together
    with the real roots of the denominator (pole sign changes); membership of
    each induced cell is decided by evaluating ``f`` at its midpoint, with
    half-infinite cells probed beyond the outermost candidate.  An isolated
    tangency point contributes a degenerate singleton.
    """
    lo_dom, hi_dom = float(domain[0]), float(domain[1])
    bp = (f.num - f.den.scale_by(threshold)).trimmed()
    den = f.den.trimmed()
    if bp.is_zero:
        # f == threshold wherever defined; the closure is the whole domain.
        return IntervalUnion(((lo_dom, hi_dom),))
    cand = list(real_roots(bp)) if bp.degree >= 1 else []
    if den.degree >= 1:
        cand.extend(real_roots(den))
    cand = sorted(c for c in cand if lo_dom < c < hi_dom)
    cand = list(_dedup_sorted(np.array(cand))) if cand else []

    def below(x):
        v = f(x)
        return bool(np.isfinite(v) and v <= threshold)

    if not cand:
        probe = 0.0 if lo_dom == -math.inf and hi_dom == math.inf else (
            0.5 * (max(lo_dom, -1e12) + min(hi_dom, 1e12))
        )
        if below(probe):
            return IntervalUnion(((lo_dom, hi_dom),))
        return IntervalUnion.empty()

    big = 2.0 * max(abs(c) for c in cand) + 1.0
    edges = [max(lo_dom, -math.inf)] + cand + [hi_dom]
    probes = []
    for left, right in zip(edges[:-1], edges[1:]):
        if left == -math.inf:
            probes.append(min(-big, right - 1.0) if right != math.inf else -big)
        elif right == math.inf:
            probes.append(max(big, left + 1.0))
        else:
            probes.append(0.5 * (left + right))
    included = [below(p) for p in probes]

    pieces = []
    for i, inc in enumerate(included):
        if inc:
            pieces.append((edges[i], edges[i + 1]))
    # Tangency: boundary point flanked by exclusion on both sides where f
    # actually attains the threshold.
    for i, c in enumerate(cand):
        if not included[i] and not included[i + 1]:
            v = f(c)
            if np.isfinite(v) and abs(v - threshold) <= 1e-6 * (1.0 + abs(threshold)):
                pieces.append((c, c))
    if not pieces:
        return IntervalUnion.empty()
    return IntervalUnion.from_intervals(pieces)
