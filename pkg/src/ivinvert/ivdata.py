"""Dataset ingestion and reduction to the sufficient statistic.

The observed sample ``(y1, y2, Z, X)`` enters inference only through the
orthonormalized cross-moment matrix ``R`` and a covariance estimate for
``vec(R)`` built under the declared error structure (homoskedastic, White,
Newey-West with Bartlett weights, or cluster-sum sandwich).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ivinvert.errors import DataError, NumericalError

__all__ = [
    "ErrorSpec",
    "ColumnMap",
    "Dataset",
    "SufficientStats",
    "load_dataset",
    "compute_sufficient_stats",
    "default_hac_bandwidth",
    "stats_cache_key",
    "save_sufficient_stats",
    "load_sufficient_stats",
]

_RANK_RTOL = 1e-10  # singular values below this times the largest count as zero


def default_hac_bandwidth(n: int) -> int:
    """Newey-West rule-of-thumb bandwidth, floor(4 (n/100)^(2/9))."""
    return int(math.floor(4.0 * (n / 100.0) ** (2.0 / 9.0)))


@dataclass(frozen=True)
class ErrorSpec:
    """Declared error structure for the covariance estimate.

    ``kind`` is one of ``"homoskedastic"``, ``"heteroskedastic"``, ``"hac"``
    (with a nonnegative integer ``bandwidth``), or ``"clustered"`` (with a
    length-n integer ``cluster_id``).
    """

    kind: str
    bandwidth: int | None = None
    cluster_id: np.ndarray | None = None

    _KINDS = ("homoskedastic", "heteroskedastic", "hac", "clustered")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise DataError(f"unknown error spec kind {self.kind!r}")
        if self.kind == "hac":
            if self.bandwidth is None or self.bandwidth < 0:
                raise DataError("hac spec requires a nonnegative integer bandwidth")
        if self.kind == "clustered":
            if self.cluster_id is None:
                raise DataError("clustered spec requires a cluster_id array")
            object.__setattr__(
                self, "cluster_id", np.asarray(self.cluster_id).ravel()
            )

    @classmethod
    def homoskedastic(cls) -> "ErrorSpec":
        return cls("homoskedastic")

    @classmethod
    def heteroskedastic(cls) -> "ErrorSpec":
        return cls("heteroskedastic")

    @classmethod
    def hac(cls, bandwidth: int) -> "ErrorSpec":
        return cls("hac", bandwidth=int(bandwidth))

    @classmethod
    def clustered(cls, cluster_id) -> "ErrorSpec":
        return cls("clustered", cluster_id=cluster_id)

    def describe(self) -> str:
        if self.kind == "hac":
            return f"hac(bandwidth={self.bandwidth})"
        if self.kind == "clustered":
            return f"clustered(groups={len(np.unique(self.cluster_id))})"
        return self.kind


@dataclass(frozen=True)
class ColumnMap:
    """Column mapping for delimited input files."""

    y1: str
    y2: str
    instruments: tuple[str, ...]
    covariates: tuple[str, ...] = ()
    cluster: str | None = None
    delimiter: str = ","
    add_intercept: bool = True


def _check_full_rank(mat: np.ndarray, name: str):
    if mat.size == 0:
        return
    svals = np.linalg.svd(mat, compute_uv=False)
    if svals[0] == 0.0 or svals[-1] <= _RANK_RTOL * svals[0]:
        raise DataError(f"{name} is rank deficient (collinear columns)")


@dataclass(frozen=True)
class Dataset:
    """Raw observations plus the declared error structure.

    ``X`` may be empty (``d = 0``).  Validation enforces ``n >= k + d + 2``,
    full column rank of Z and X, and a usable cluster assignment when present.
    """

    y1: np.ndarray
    y2: np.ndarray
    Z: np.ndarray
    X: np.ndarray
    error_spec: ErrorSpec

    def __post_init__(self):
        y1 = np.asarray(self.y1, dtype=float).ravel()
        y2 = np.asarray(self.y2, dtype=float).ravel()
        Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        X = np.asarray(self.X, dtype=float)
        if X.size == 0:
            X = np.empty((len(y1), 0))
        X = np.atleast_2d(X)
        n = len(y1)
        if len(y2) != n or Z.shape[0] != n or X.shape[0] != n:
            raise DataError("y1, y2, Z, X must have a common number of rows")
        if not (
            np.all(np.isfinite(y1))
            and np.all(np.isfinite(y2))
            and np.all(np.isfinite(Z))
            and np.all(np.isfinite(X))
        ):
            raise DataError("data contains non-finite values")
        k, d = Z.shape[1], X.shape[1]
        if k < 1:
            raise DataError("at least one instrument is required")
        if n < k + d + 2:
            raise DataError(f"n = {n} is too small for k = {k}, d = {d}")
        _check_full_rank(Z, "Z")
        _check_full_rank(X, "X")
        if d > 0:
            _check_full_rank(np.hstack([Z, X]), "[Z X]")
        spec = self.error_spec
        if spec.kind == "clustered":
            if len(spec.cluster_id) != n:
                raise DataError("cluster_id must have length n")
            if len(np.unique(spec.cluster_id)) < 2:
                raise DataError("cluster_id must contain at least 2 distinct values")
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y2", y2)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return len(self.y1)

    @property
    def k(self) -> int:
        return self.Z.shape[1]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class SufficientStats:
    """The k-by-2 statistic ``R`` and the 2k-by-2k covariance estimate for vec(R)."""

    R: np.ndarray
    Sigma: np.ndarray
    k: int = field(default=0)

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        Sigma = np.asarray(self.Sigma, dtype=float)
        if R.ndim != 2 or R.shape[1] != 2:
            raise DataError("R must be a k-by-2 matrix")
        k = R.shape[0]
        if Sigma.shape != (2 * k, 2 * k):
            raise DataError("Sigma must be 2k-by-2k")
        rel = np.max(np.abs(Sigma - Sigma.T)) / max(np.max(np.abs(Sigma)), 1e-300)
        if rel > 1e-12:
            raise NumericalError("Sigma is not symmetric to within 1e-12 relative")
        eig_min = float(np.linalg.eigvalsh(Sigma)[0])
        if eig_min <= 0.0:
            raise NumericalError(
                f"Sigma is not positive definite (min eigenvalue {eig_min:.3e})"
            )
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "Sigma", 0.5 * (Sigma + Sigma.T))
        object.__setattr__(self, "k", k)

    @property
    def vec_r(self) -> np.ndarray:
        return self.R.T.ravel()  # [R[:,0]; R[:,1]]


def load_dataset(path, columns: ColumnMap, error_spec: ErrorSpec | str = "homoskedastic") -> Dataset:
    """Read a delimited file and assemble a validated :class:`Dataset`.

    An intercept column is appended to the covariates unless
    ``columns.add_intercept`` is false.  ``error_spec`` may be an
    :class:`ErrorSpec` or one of the kind names; ``"hac"`` uses the
    rule-of-thumb bandwidth and ``"clustered"`` reads ``columns.cluster``.
    """
    try:
        frame = pd.read_csv(path, sep=columns.delimiter)
    except FileNotFoundError:
        raise DataError(f"input file not found: {path}") from None
    needed = [columns.y1, columns.y2, *columns.instruments, *columns.covariates]
    if columns.cluster is not None:
        needed.append(columns.cluster)
    missing = [c for c in needed if c not in frame.columns]
    if missing:
        raise DataError(f"missing columns in {path}: {missing}")

    def numeric(names):
        block = frame[list(names)]
        arr = block.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
        if np.any(np.isnan(arr)):
            bad = [n for n in names if block[n].apply(pd.to_numeric, errors="coerce").isna().any()]
            raise DataError(f"non-numeric or missing cells in columns {bad}")
        return arr

    y1 = numeric([columns.y1])[:, 0]
    y2 = numeric([columns.y2])[:, 0]
    Z = numeric(columns.instruments)
    X = numeric(columns.covariates) if columns.covariates else np.empty((len(y1), 0))
    if columns.add_intercept:
        X = np.hstack([X, np.ones((len(y1), 1))])

    if isinstance(error_spec, str):
        if error_spec == "hac":
            error_spec = ErrorSpec.hac(default_hac_bandwidth(len(y1)))
        elif error_spec == "clustered":
            if columns.cluster is None:
                raise DataError("clustered error spec requires a cluster column")
            codes = pd.factorize(frame[columns.cluster])[0]
            error_spec = ErrorSpec.clustered(codes)
        else:
            error_spec = ErrorSpec(error_spec)
    return Dataset(y1=y1, y2=y2, Z=Z, X=X, error_spec=error_spec)


def _sym_inv_sqrt(mat: np.ndarray, name: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    if vals[0] <= _RANK_RTOL * max(vals[-1], 0.0) or vals[0] <= 0.0:
        raise NumericalError(f"{name} is numerically singular")
    return (vecs / np.sqrt(vals)) @ vecs.T


def compute_sufficient_stats(data: Dataset) -> SufficientStats:
    """Partial out covariates and build ``R`` with its covariance estimate.

    ``R = (Zp' Zp)^{-1/2} Zp' Y`` with ``Zp = M_X Z`` and the symmetric matrix
    square root, so the statistic is invariant to the instrument basis.  The
    covariance of ``vec(R)`` is assembled from reduced-form OLS residuals of
    ``Y`` on ``(Z, X)`` per the declared error structure, scaled so that
    ``R - E[R]`` is approximately ``N(0, Sigma)``.
    """
    Y = np.column_stack([data.y1, data.y2])
    Z, X = data.Z, data.X
    if data.d > 0:
        coef, *_ = np.linalg.lstsq(X, Z, rcond=None)
        Zp = Z - X @ coef
    else:
        Zp = Z
    _check_full_rank(Zp, "Z after partialling out X")
    g_half_inv = _sym_inv_sqrt(Zp.T @ Zp, "Zp'Zp")
    W = Zp @ g_half_inv
    R = W.T @ Y

    design = np.hstack([Z, X]) if data.d > 0 else Z
    coef, *_ = np.linalg.lstsq(design, Y, rcond=None)
    V = Y - design @ coef

    spec = data.error_spec
    if spec.kind == "homoskedastic":
        omega = V.T @ V / data.n
        sigma = np.kron(omega, np.eye(data.k))
    else:
        # Rows of H are kron(V_i, W_i); vec(R) - E stacks to sum(H).
        H = np.hstack([V[:, [0]] * W, V[:, [1]] * W])
        if spec.kind == "heteroskedastic":
            sigma = H.T @ H
        elif spec.kind == "hac":
            sigma = H.T @ H
            for j in range(1, spec.bandwidth + 1):
                if j >= data.n:
                    break
                w = 1.0 - j / (spec.bandwidth + 1.0)
                gamma = H[j:].T @ H[:-j]
                sigma = sigma + w * (gamma + gamma.T)
        else:  # clustered
            codes, _ = pd.factorize(spec.cluster_id)
            sums = np.zeros((codes.max() + 1, 2 * data.k))
            np.add.at(sums, codes, H)
            sigma = sums.T @ sums
    sigma = 0.5 * (sigma + sigma.T)
    try:
        return SufficientStats(R=R, Sigma=sigma)
    except NumericalError as exc:
        raise NumericalError(
            f"covariance estimate under {spec.describe()} is degenerate: {exc}"
        ) from exc


# -- optional binary cache keyed by a dataset digest --


def stats_cache_key(data: Dataset) -> str:
    h = hashlib.sha256()
    for arr in (data.y1, data.y2, data.Z, data.X):
        h.update(np.ascontiguousarray(arr).tobytes())
    meta = {"kind": data.error_spec.kind, "bandwidth": data.error_spec.bandwidth}
    h.update(json.dumps(meta, sort_keys=True).encode())
    if data.error_spec.cluster_id is not None:
        h.update(np.ascontiguousarray(data.error_spec.cluster_id).tobytes())
    return h.hexdigest()


def save_sufficient_stats(path, ss: SufficientStats, key: str):
    np.savez(path, R=ss.R, Sigma=ss.Sigma, key=np.array(key))


def load_sufficient_stats(path, key: str) -> SufficientStats | None:
    try:
        blob = np.load(path, allow_pickle=False)
    except (FileNotFoundError, OSError):
        return None
    if str(blob["key"]) != key:
        return None
    return SufficientStats(R=blob["R"], Sigma=blob["Sigma"])
