"""Test statistics of the weak-instrument robust toolkit.

Every statistic (AR, LM, rank, QLR, LR, IL) is available two ways: direct
matrix evaluation through :class:`StatEvaluator`, vectorized over candidate
values, and recovered rational representations through :func:`build_profile`.
All statistics depend on the null only through the direction of the vectors
``a0 = (beta0, 1)`` and ``b0 = (1, -beta0)``, so each admits finite limits as
``beta0 -> +-inf``; the evaluator exposes both the ``beta`` and the
compactified ``theta`` parametrizations of the same computation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from ivinvert.errors import NumericalError, QuadratureError
from ivinvert.ivdata import SufficientStats
from ivinvert.polyalg import FactoredRational, RationalFn, fit_rational, real_roots

__all__ = [
    "NullVectors",
    "STPair",
    "StatEvaluator",
    "StatProfile",
    "ar_stat",
    "lm_stat",
    "rank_stat",
    "qlr_stat",
    "st_decompose",
    "lr_stat",
    "il_stat",
    "build_profile",
    "dirs_from_beta",
    "dirs_from_theta",
]


@dataclass(frozen=True)
class NullVectors:
    """The null-restricted direction pair built from a candidate value."""

    beta0: float
    a0: tuple[float, float] = field(init=False)
    b0: tuple[float, float] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "a0", (self.beta0, 1.0))
        object.__setattr__(self, "b0", (1.0, -self.beta0))


@dataclass(frozen=True)
class STPair:
    """Independent decomposition of vec(R): S carries the null evidence, T the
    identification strength; ``S'S`` equals the AR statistic."""

    S: np.ndarray
    T: np.ndarray
    beta0: float


def dirs_from_beta(betas):
    """Direction pairs (a, b) for finite candidate values."""
    b = np.atleast_1d(np.asarray(betas, dtype=float))
    a_dir = np.stack([b, np.ones_like(b)], axis=1)
    b_dir = np.stack([np.ones_like(b), -b], axis=1)
    return a_dir, b_dir


def dirs_from_theta(thetas):
    """Direction pairs for the compactified parameter theta in [-1, 1].

    ``theta = (2/pi) atan(beta)``; the endpoint values represent beta = +-inf.
    """
    t = np.atleast_1d(np.asarray(thetas, dtype=float))
    phi = 0.5 * np.pi * t
    a_dir = np.stack([np.sin(phi), np.cos(phi)], axis=1)
    b_dir = np.stack([np.cos(phi), -np.sin(phi)], axis=1)
    return a_dir, b_dir


class StatEvaluator:
    """Vectorized direct evaluation of AR, LM, rank, and QLR.

    Precomputes the 2x2 block structure of Sigma and its inverse so a batch of
    candidate values costs two stacked k-by-k solves.  Values are identical
    whether candidates enter as ``beta`` or as compactified ``theta`` because
    every statistic is scale-invariant in the direction vectors.
    """

    def __init__(self, ss: SufficientStats):
        self.ss = ss
        self.k = ss.k
        k = ss.k
        self.S11 = ss.Sigma[:k, :k]
        self.S12 = ss.Sigma[:k, k:]
        self.S22 = ss.Sigma[k:, k:]
        lam = np.linalg.inv(ss.Sigma)
        lam = 0.5 * (lam + lam.T)
        self.L11 = lam[:k, :k]
        self.L12 = lam[:k, k:]
        self.L22 = lam[k:, k:]
        self.R1 = ss.R[:, 0]
        self.R2 = ss.R[:, 1]
        # ua(a) = a1*u1 + a2*u2 with u = Lambda-weighted cross moments
        self.u1 = self.L11 @ self.R1 + self.L12 @ self.R2
        self.u2 = self.L12.T @ self.R1 + self.L22 @ self.R2
        self.degenerate = bool(np.all(ss.R == 0.0))

    # -- stacked building blocks --

    def _vbb(self, b_dir):
        b1, b2 = b_dir[:, 0], b_dir[:, 1]
        cross = self.S12 + self.S12.T
        return (
            b1[:, None, None] ** 2 * self.S11
            + (b1 * b2)[:, None, None] * cross
            + b2[:, None, None] ** 2 * self.S22
        )

    def _vaa(self, a_dir):
        a1, a2 = a_dir[:, 0], a_dir[:, 1]
        cross = self.L12 + self.L12.T
        return (
            a1[:, None, None] ** 2 * self.L11
            + (a1 * a2)[:, None, None] * cross
            + a2[:, None, None] ** 2 * self.L22
        )

    def _parts(self, a_dir, b_dir):
        """Raw ingredients for stacked direction pairs.

        Returns a dict with ``ar``, ``p_lm``, ``q_lm``, ``rank``, ``det_vbb``,
        ``det_vaa``.  Used both for statistic values and for the structured
        polynomial interpolation in :func:`build_profile`.
        """
        rb = np.outer(b_dir[:, 0], self.R1) + np.outer(b_dir[:, 1], self.R2)
        ua = np.outer(a_dir[:, 0], self.u1) + np.outer(a_dir[:, 1], self.u2)
        vbb = self._vbb(b_dir)
        vaa = self._vaa(a_dir)
        x = np.linalg.solve(vbb, rb[..., None])[..., 0]  # Vbb^{-1} R b
        y = np.linalg.solve(vaa, ua[..., None])[..., 0]  # Vaa^{-1} u_a
        ar = np.einsum("mi,mi->m", rb, x)
        rank = np.einsum("mi,mi->m", ua, y)
        p_lm = np.einsum("mi,mi->m", x, y)
        w = np.linalg.solve(vbb, y[..., None])[..., 0]
        q_lm = np.einsum("mi,mi->m", y, w)
        return {
            "ar": ar, "rank": rank, "p_lm": p_lm, "q_lm": q_lm,
            "det_vbb": np.linalg.det(vbb), "det_vaa": np.linalg.det(vaa),
        }

    def _core(self, a_dir, b_dir):
        """Returns (ar, lm, rank) arrays for stacked direction pairs."""
        parts = self._parts(a_dir, b_dir)
        ar, rank = parts["ar"], parts["rank"]
        p_lm, q_lm = parts["p_lm"], parts["q_lm"]
        with np.errstate(divide="ignore", invalid="ignore"):
            lm = p_lm**2 / q_lm
        # Degenerate score variance: +inf sentinel, except the all-zero case.
        lm = np.where(q_lm <= 0.0, np.inf, lm)
        lm = np.where((p_lm == 0.0) & (q_lm <= 0.0), 0.0, lm)
        lm = np.where(np.isnan(lm), 0.0, lm)
        return ar, lm, rank

    def _batched(self, a_dir, b_dir, chunk=65536):
        m = a_dir.shape[0]
        if m <= chunk:
            return self._core(a_dir, b_dir)
        outs = [self._core(a_dir[i : i + chunk], b_dir[i : i + chunk])
                for i in range(0, m, chunk)]
        return tuple(np.concatenate(parts) for parts in zip(*outs))

    def all_beta(self, betas):
        return self._batched(*dirs_from_beta(betas))

    def all_theta(self, thetas):
        return self._batched(*dirs_from_theta(thetas))

    def parts_beta(self, betas):
        return self._parts(*dirs_from_beta(betas))

    def parts_w(self, ws, wscale: float):
        """Raw ingredients along the rational compactification.

        ``beta = wscale * w / (1 - w^2)`` maps (-1, 1) onto the real line and
        preserves rationality; the direction vectors ``a = (wscale*w, 1-w^2)``
        and ``b = (1-w^2, -wscale*w)`` are polynomial in ``w``, so every
        determinant and numerator below is a polynomial in ``w``.
        """
        w = np.atleast_1d(np.asarray(ws, dtype=float))
        lam = 1.0 - w**2
        a_dir = np.stack([wscale * w, lam], axis=1)
        b_dir = np.stack([lam, -wscale * w], axis=1)
        return self._parts(a_dir, b_dir)

    def all_w(self, ws, wscale: float):
        w = np.atleast_1d(np.asarray(ws, dtype=float))
        lam = 1.0 - w**2
        a_dir = np.stack([wscale * w, lam], axis=1)
        b_dir = np.stack([lam, -wscale * w], axis=1)
        return self._batched(a_dir, b_dir)

    def ar_beta(self, betas):
        return self.all_beta(betas)[0]

    def lm_beta(self, betas):
        return self.all_beta(betas)[1]

    def rank_beta(self, betas):
        return self.all_beta(betas)[2]

    def qlr_beta(self, betas):
        ar, lm, rank = self.all_beta(betas)
        return qlr_from_parts(ar, lm, rank)

    def rank_theta(self, thetas):
        return self.all_theta(thetas)[2]

    def qlr_theta(self, thetas):
        ar, lm, rank = self.all_theta(thetas)
        return qlr_from_parts(ar, lm, rank)

    # -- S/T machinery (pointwise) --

    def _sym_inv_sqrt(self, mat):
        vals, vecs = np.linalg.eigh(mat)
        if vals[0] <= 0.0:
            raise NumericalError("direction-weighted covariance is not PD")
        return (vecs / np.sqrt(vals)) @ vecs.T

    def st_pair(self, beta0: float) -> STPair:
        a_dir, b_dir = dirs_from_beta([beta0])
        return self._st_from_dirs(a_dir[0], b_dir[0], beta0)

    def st_pair_theta(self, theta0: float) -> STPair:
        a_dir, b_dir = dirs_from_theta([theta0])
        beta0 = math.tan(0.5 * math.pi * theta0) if abs(theta0) < 1.0 else math.inf
        return self._st_from_dirs(a_dir[0], b_dir[0], beta0)

    def _st_from_dirs(self, a, b, beta0):
        vbb = self._vbb(b[None, :])[0]
        vaa = self._vaa(a[None, :])[0]
        rb = b[0] * self.R1 + b[1] * self.R2
        ua = a[0] * self.u1 + a[1] * self.u2
        s_vec = self._sym_inv_sqrt(vbb) @ rb
        t_vec = self._sym_inv_sqrt(vaa) @ ua
        return STPair(S=s_vec, T=t_vec, beta0=beta0)

    def reconstruction_mats(self, a, b):
        """B and A of the inverse transform vec(R) = B S + A T for a direction pair."""
        k = self.k
        vbb = self._vbb(np.asarray(b, dtype=float)[None, :])[0]
        vaa = self._vaa(np.asarray(a, dtype=float)[None, :])[0]
        sig_b = b[0] * self.ss.Sigma[:, :k] + b[1] * self.ss.Sigma[:, k:]
        b_mat = sig_b @ self._sym_inv_sqrt(vbb)
        vaa_half_inv = self._sym_inv_sqrt(vaa)
        a_mat = np.vstack([a[0] * vaa_half_inv, a[1] * vaa_half_inv])
        return b_mat, a_mat

    def logdet_vaa_theta(self, thetas):
        """log det of the (normalized-direction) a-weighted inverse covariance."""
        a_dir, _ = dirs_from_theta(thetas)
        vaa = self._vaa(a_dir)
        sign, logdet = np.linalg.slogdet(vaa)
        if np.any(sign <= 0):
            raise NumericalError("a-weighted inverse covariance lost positivity")
        return logdet


def qlr_from_parts(ar, lm, rank):
    """QLR from its three ingredients; tiny negative discriminants clamp to 0."""
    diff = ar - rank
    disc = diff**2 + 4.0 * lm * rank
    disc = np.where(disc < 0.0, 0.0, disc)
    return 0.5 * (diff + np.sqrt(disc))


# ---------------------------------------------------------------------------
# Scalar operations
# ---------------------------------------------------------------------------


def ar_stat(ss: SufficientStats, beta0: float) -> float:
    """Continuously-updated AR quadratic form at the candidate value."""
    return float(StatEvaluator(ss).ar_beta([beta0])[0])


def lm_stat(ss: SufficientStats, beta0: float) -> float:
    """Score statistic; +inf signals a degenerate score variance at beta0."""
    return float(StatEvaluator(ss).lm_beta([beta0])[0])


def rank_stat(ss: SufficientStats, beta0: float) -> float:
    """Instrument-strength statistic; equals T'T of the S/T decomposition."""
    return float(StatEvaluator(ss).rank_beta([beta0])[0])


def qlr_stat(ss: SufficientStats, beta0: float) -> float:
    ar, lm, rank = StatEvaluator(ss).all_beta([beta0])
    return float(qlr_from_parts(ar, lm, rank)[0])


def st_decompose(ss: SufficientStats, beta0: float) -> STPair:
    """S and T with symmetric inverse square roots; exactly invertible."""
    return StatEvaluator(ss).st_pair(beta0)


# ---------------------------------------------------------------------------
# Profiles: recovered rational representations
# ---------------------------------------------------------------------------


@dataclass
class StatProfile:
    """Rational forms of AR, LM, and rank plus the source statistics.

    Forms are rational in the bounded parameter ``w`` of ``wmap`` (endpoints
    ``w = +-1`` carry the ``beta = +-inf`` limits).  Each form passed a
    held-out residual check against direct evaluation at fit time;
    ``diagnostics`` records the degrees and worst residuals.
    """

    ss: SufficientStats
    ar: RationalFn
    lm: RationalFn
    rank: RationalFn
    evaluator: StatEvaluator
    wmap: "BetaWMap"
    degenerate: bool = False
    diagnostics: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def k(self) -> int:
        return self.ss.k

    def ar_of_beta(self, betas):
        return self.ar(self.wmap.w(betas))

    def lm_of_beta(self, betas):
        return self.lm(self.wmap.w(betas))

    def rank_of_beta(self, betas):
        return self.rank(self.wmap.w(betas))


@dataclass(frozen=True)
class BetaWMap:
    """Rationality-preserving compactification ``beta = scale * w / (1 - w^2)``.

    Maps (-1, 1) bijectively onto the real line with ``w = +-1`` standing for
    ``beta = +-inf``.  Unlike the arctangent reparametrization used by the
    approximation pathway, this map keeps rational functions rational (degrees
    double), so the exact machinery can work on the bounded interval.
    """

    scale: float = 1.0

    def beta(self, w):
        w = np.asarray(w, dtype=float)
        with np.errstate(divide="ignore"):
            out = self.scale * w / (1.0 - w * w)
        out = np.where(w >= 1.0, np.inf, out)
        out = np.where(w <= -1.0, -np.inf, out)
        return out if out.ndim else float(out)

    def w(self, beta):
        beta = np.asarray(beta, dtype=float)
        s = self.scale
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (np.sqrt(s * s + 4.0 * beta * beta) - s) / (2.0 * beta)
        out = np.where(beta == 0.0, 0.0, out)
        out = np.where(np.isposinf(beta), 1.0, out)
        out = np.where(np.isneginf(beta), -1.0, out)
        return out if out.ndim else float(out)


def _interp_poly(values_at, degree: int, domain) -> "object":
    """Exact Chebyshev interpolation of a polynomial of known degree bound."""
    from ivinvert.polyalg import Poly, cheb_nodes, _vals2coeffs

    nodes = cheb_nodes(max(degree, 1), domain)
    vals = np.asarray(values_at(nodes), dtype=float)
    return Poly(_vals2coeffs(vals), "cheb", tuple(domain))


_ANCHOR_LADDER = (0.0, 0.37, -0.73, 0.81, -0.57, 0.23)


def structured_forms(ev: StatEvaluator, wmap: BetaWMap) -> dict:
    """Rational forms of AR, LM, rank on w in [-1, 1] via determinant structure.

    With the polynomial direction vectors ``a = (s w, 1-w^2)`` and
    ``b = (1-w^2, -s w)``, the products ``AR * det(Vbb)``, ``rank * det(Vaa)``,
    ``p_LM * det(Vbb) det(Vaa)`` and ``q_LM * det(Vaa)^2 det(Vbb)`` are
    polynomials in w of degrees 4k, 4k, 8k-4 and 12k-8, each recovered exactly
    by Chebyshev interpolation of stable pointwise values; the statistic ratio
    itself is never sampled, which keeps the representation faithful across
    the sharp near-pinch features of the LM statistic.
    """
    k = ev.k
    domain = (-1.0, 1.0)
    parts_at = lambda ws: ev.parts_w(ws, wmap.scale)  # noqa: E731

    def poly_of(key_fun, degree):
        return _interp_poly(lambda xs: key_fun(parts_at(xs)), degree, domain)

    det_vbb = poly_of(lambda p: p["det_vbb"], 4 * k)
    det_vaa = poly_of(lambda p: p["det_vaa"], 4 * k)
    num_ar = poly_of(lambda p: p["ar"] * p["det_vbb"], 4 * k)
    num_r = poly_of(lambda p: p["rank"] * p["det_vaa"], 4 * k)
    num_p = poly_of(lambda p: p["p_lm"] * p["det_vbb"] * p["det_vaa"], 8 * k - 4)
    num_q = poly_of(
        lambda p: p["q_lm"] * p["det_vaa"] ** 2 * p["det_vbb"], 12 * k - 8
    )
    spec = {
        "ar": ((num_ar,), (det_vbb,)),
        "rank": ((num_r,), (det_vaa,)),
        "lm": ((num_p, num_p), (det_vbb, num_q)),
    }
    out = {"pieces": {"det_vbb": det_vbb, "det_vaa": det_vaa, "num_ar": num_ar,
                      "num_r": num_r, "num_p": num_p, "num_q": num_q}}
    for name, (nfs, dfs) in spec.items():
        num = nfs[0] if len(nfs) == 1 else nfs[0] * nfs[1]
        den = dfs[0] if len(dfs) == 1 else dfs[0] * dfs[1]
        rf = None
        for anchor in _ANCHOR_LADDER:
            try:
                rf = FactoredRational(num, den, anchor,
                                      num_factors=tuple(nfs),
                                      den_factors=tuple(dfs))
                break
            except ValueError:
                continue
        if rf is None:
            raise NumericalError(f"no usable anchor for the {name} rational form")
        out[name] = rf
    return out


def heldout_w_points(ev: StatEvaluator, wscale: float, count: int = 64) -> np.ndarray:
    """Deterministic held-out points for residual verification.

    Candidates interleave the interpolation nodes; points inside detectably
    ill-conditioned zones are dropped.  A zone is flagged through the direct
    kernel alone: wherever one of the structural pieces (determinants, score
    numerator/variance) dips many orders below its own scale, both the
    coefficient representation and the direct matrix evaluation lose relative
    accuracy, so a pointwise value comparison there measures noise, not fit
    quality.  These are the same degenerate-score neighborhoods the LM
    statistic's +inf sentinel exists for.
    """
    pool = np.concatenate([np.array([-1.0]), np.linspace(-1, 1, 2 * count + 3)[1:-1],
                           np.array([1.0])])
    pool = np.unique(pool)
    parts = ev.parts_w(pool, wscale)
    pieces = [
        parts["det_vbb"], parts["det_vaa"],
        parts["ar"] * parts["det_vbb"],
        parts["rank"] * parts["det_vaa"],
        parts["p_lm"] * parts["det_vbb"] * parts["det_vaa"],
        parts["q_lm"] * parts["det_vaa"] ** 2 * parts["det_vbb"],
    ]
    chi = np.zeros(pool.size)
    for vals in pieces:
        top = np.max(np.abs(vals))
        with np.errstate(divide="ignore"):
            chi = np.maximum(chi, top / np.abs(vals))
    order = np.argsort(chi, kind="stable")
    keep = order[: max(count, 1)]
    return np.sort(pool[keep])


def _wmap_for(ss: SufficientStats) -> BetaWMap:
    """Balance the endpoint scales of the compactified determinants."""
    k = ss.k
    sig = ss.Sigma
    lam = np.linalg.inv(sig)
    s11, s22 = sig[:k, :k], sig[k:, k:]
    l11, l22 = lam[:k, :k], lam[k:, k:]
    with np.errstate(over="ignore"):
        sb = (np.linalg.det(s11) / np.linalg.det(s22)) ** (1.0 / (2.0 * k))
        sa = (np.linalg.det(l22) / np.linalg.det(l11)) ** (1.0 / (2.0 * k))
    s = math.sqrt(max(sa, 1e-12) * max(sb, 1e-12))
    if not math.isfinite(s):
        s = 1.0
    return BetaWMap(scale=float(min(max(s, 1e-3), 1e3)))


def build_profile(ss: SufficientStats, *, scale: float | None = None,
                  heldout_tol: float = 1e-8) -> StatProfile:
    """Recover rational representations of AR, LM, and rank.

    The forms live on the bounded reparametrization ``w`` (degrees are twice
    the beta-space bounds 2k, 8k-4, 2k) and are verified against direct matrix
    evaluation at 64 held-out points.  A zero R short-circuits to
    identically-zero forms.
    """
    from ivinvert.errors import FitError
    from ivinvert.polyalg import Poly, cheb_nodes

    ev = StatEvaluator(ss)
    if ev.degenerate:
        zero = RationalFn(Poly(np.zeros(1), "cheb"), Poly(np.ones(1), "cheb"))
        return StatProfile(ss=ss, ar=zero, lm=zero, rank=zero, evaluator=ev,
                           wmap=BetaWMap(1.0), degenerate=True,
                           diagnostics={"note": "R == 0"})
    wmap = _wmap_for(ss) if scale is None else BetaWMap(float(scale))
    worst_seen = math.inf
    for attempt in range(3):
        forms = structured_forms(ev, wmap)
        w_held = heldout_w_points(ev, wmap.scale)
        ar_d, lm_d, rank_d = ev.all_w(w_held, wmap.scale)
        worst = 0.0
        for rf, direct in ((forms["ar"], ar_d), (forms["lm"], lm_d),
                           (forms["rank"], rank_d)):
            ok = np.isfinite(direct)
            rel = np.abs(rf(w_held[ok]) - direct[ok]) / (1.0 + np.abs(direct[ok]))
            worst = max(worst, float(np.max(rel)))
        if worst <= heldout_tol:
            diag = {
                "ar_degrees": forms["ar"].degrees,
                "lm_degrees": forms["lm"].degrees,
                "rank_degrees": forms["rank"].degrees,
                "heldout_worst": worst,
                "w_scale": wmap.scale,
            }
            return StatProfile(ss=ss, ar=forms["ar"], lm=forms["lm"],
                               rank=forms["rank"], evaluator=ev, wmap=wmap,
                               degenerate=False, diagnostics=diag,
                               _cache={"pieces": forms["pieces"]})
        worst_seen = min(worst_seen, worst)
        wmap = BetaWMap(wmap.scale * (4.0 if attempt == 0 else 0.0625))
    raise FitError(
        f"structured rational forms failed the held-out check: worst relative "
        f"residual {worst_seen:.3e}"
    )


def rank_stationary_points(profile: StatProfile) -> np.ndarray:
    """Stationary points of the rank statistic, in w, from the fitted form.

    These are the real roots of the numerator of d(rank)/dw strictly inside
    (-1, 1); the beta-space stationary points are their images under the map
    (dw/dbeta never vanishes).
    """
    pr, qr = profile.rank.num, profile.rank.den
    dnum = (pr.derivative() * qr - pr * qr.derivative()).trimmed()
    if dnum.is_zero or dnum.degree < 1:
        return np.array([])
    edge = 1.0 - 1e-12
    roots = real_roots(dnum, (-edge, edge))
    return roots


def rank_sup(profile: StatProfile) -> float:
    """Global supremum of the rank statistic over the extended real line.

    Enumerates stationary points of the fitted rational form, evaluates the
    statistic directly there and at the compactified endpoints, and takes the
    maximum; never uses iterative local search.
    """
    if profile.degenerate:
        return 0.0
    ev = profile.evaluator
    cand = rank_stationary_points(profile)
    values = [float(ev.rank_theta([1.0])[0])]
    if cand.size:
        values.extend(ev.all_w(cand, profile.wmap.scale)[2].tolist())
    return max(values)


def lr_stat(profile: StatProfile, beta0: float) -> float:
    """sup over beta of rank(beta), minus rank(beta0); always nonnegative."""
    if profile.degenerate:
        return 0.0
    if "rank_sup" not in profile._cache:
        profile._cache["rank_sup"] = rank_sup(profile)
    r0 = float(profile.evaluator.rank_beta([beta0])[0])
    return max(profile._cache["rank_sup"], r0) - r0


def il_stat(profile: StatProfile, beta0: float, *, quad_tol: float = 1e-7) -> float:
    """Integrated-likelihood statistic at beta0, for k >= 2.

    The integral over beta is mapped through the theta-compactification so the
    tails enter exactly up to quadrature error; the integrand is evaluated in
    normalized-direction form, which stays bounded on all of [-1, 1].  The
    largest exponent is factored out to guard overflow.
    """
    k = profile.k
    if k < 2:
        raise ValueError(
            "the integrated-likelihood statistic requires k >= 2; the weight "
            "|beta - beta0|^(k-2) is not integrable at beta0 when k = 1"
        )
    ev = profile.evaluator
    r0 = float(ev.rank_beta([beta0])[0])
    theta0 = (2.0 / math.pi) * math.atan(beta0)

    probe = np.linspace(-1.0, 1.0, 257)
    r_probe = ev.all_theta(probe)[2]
    r_max = float(np.max(r_probe))

    def integrand(theta):
        th = np.atleast_1d(theta)
        rbar = ev.all_theta(th)[2]
        logdet = ev.logdet_vaa_theta(th)
        phi = 0.5 * np.pi * th
        base = np.abs(np.sin(phi) - beta0 * np.cos(phi))
        log_val = (
            0.5 * (rbar - r_max)
            - 0.5 * logdet
            + (k - 2) * np.log(np.maximum(base, 1e-300))
        )
        out = 0.5 * np.pi * np.exp(log_val)
        return out if np.ndim(theta) else float(out[0])

    pieces = []
    for lo, hi in ((-1.0, theta0), (theta0, 1.0)):
        if hi - lo <= 0:
            continue
        val, err = integrate.quad(integrand, lo, hi, epsrel=quad_tol, limit=200)
        if not math.isfinite(val) or (val > 0 and err > 50 * quad_tol * val + 1e-290):
            raise QuadratureError(
                f"integrated-likelihood quadrature did not converge: value "
                f"{val:.6e}, achieved absolute error {err:.3e}"
            )
        pieces.append(val)
    total = sum(pieces)
    scale = 0.5 * (r_max - r0)
    if scale > 700.0:
        return math.inf
    return float(math.exp(scale) * total)
