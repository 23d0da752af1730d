"""Classical reconstruction baselines: 3-D IDW, HaLRTC tensor completion, SF-Kriging."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit

log = logging.getLogger(__name__)


# -- inverse distance weighting ------------------------------------------------


@dataclass(frozen=True)
class Sample3D:
    x_m: float
    y_m: float
    f_mhz: float
    rss_dbm: float


def idw3d(samples, query, power: float = 2.0, freq_scale: float = 0.005) -> float:
    """Inverse-distance weighted mean over space and (scaled) frequency.

    ``freq_scale`` converts MHz to meters. A query coinciding with a sample
    returns that sample's value.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("idw3d needs at least one sample")
    pts = np.array([[s.x_m, s.y_m, s.f_mhz] for s in samples], dtype=float)
    vals = np.array([s.rss_dbm for s in samples], dtype=float)
    return float(idw3d_many(pts, vals, np.asarray(query, dtype=float).reshape(1, 3), power, freq_scale)[0])


def idw3d_many(points: np.ndarray, values: np.ndarray, queries: np.ndarray, power: float = 2.0,
               freq_scale: float = 0.005, chunk: int = 4096) -> np.ndarray:
    """Vectorised :func:`idw3d`; ``points``/``queries`` are ``(n, 3)`` arrays of (x, y, f)."""
    if power <= 0:
        raise ValueError("power must be positive")
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    values = np.asarray(values, dtype=float).reshape(-1)
    queries = np.asarray(queries, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        raise ValueError("idw3d needs at least one sample")
    scale = np.array([1.0, 1.0, freq_scale])
    P = points * scale
    out = np.empty(len(queries))
    for lo in range(0, len(queries), chunk):
        Q = queries[lo:lo + chunk] * scale
        d2 = ((Q[:, None, :] - P[None, :, :]) ** 2).sum(axis=2)
        exact = d2 == 0
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(exact, 0.0, d2 ** (-power / 2))
            # rows with an exact hit are 0/0 here and overwritten below
            est = (w @ values) / w.sum(axis=1)
        hit = exact.any(axis=1)
        if hit.any():
            est[hit] = values[exact[hit].argmax(axis=1)]
        out[lo:lo + chunk] = est
    return out


# -- HaLRTC --------------------------------------------------------------------


@dataclass
class MaskedTensor:
    values: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.observed = np.asarray(self.observed, dtype=bool)
        if self.values.shape != self.observed.shape:
            raise ValueError("values and observed mask differ in shape")


@dataclass
class HalrtcResult:
    tensor: np.ndarray
    objective: list[float] = field(default_factory=list)
    iterations: int = 0


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    return np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1)


def fold(mat: np.ndarray, mode: int, shape) -> np.ndarray:
    full = [shape[mode]] + [s for i, s in enumerate(shape) if i != mode]
    return np.moveaxis(mat.reshape(full), 0, mode)


def svt(mat: np.ndarray, tau: float) -> np.ndarray:
    """Singular value soft-thresholding."""
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    keep = s > 0
    return (u[:, keep] * s[keep]) @ vt[keep]


def nuclear_objective(t: np.ndarray, alphas) -> float:
    return float(sum(a * np.linalg.svd(unfold(t, i), compute_uv=False).sum() for i, a in enumerate(alphas)))


def halrtc(t: MaskedTensor, rho: float = 1e-6, iters: int = 1500, alphas=None, rho_growth: float = 1.05,
           rho_max: float = 1e10, tol: float = 0.0, track_objective: bool = True) -> HalrtcResult:
    """ADMM completion minimizing the weighted sum of mode-unfolding nuclear norms.

    Observed entries are held fixed. ``rho`` is multiplied by ``rho_growth``
    after every iteration (capped at ``rho_max``).
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    obs = t.observed
    if not obs.any():
        raise ValueError("halrtc needs at least one observed entry")
    nd = t.values.ndim
    alphas = np.full(nd, 1.0 / nd) if alphas is None else np.asarray(alphas, dtype=float)
    X = np.where(obs, t.values, 0.0)
    if obs.all():
        return HalrtcResult(X.copy(), [nuclear_objective(X, alphas)] if track_objective else [], 0)
    fill = ~obs
    Y = [np.zeros_like(X) for _ in range(nd)]
    objective = [nuclear_objective(X, alphas)] if track_objective else []
    it = 0
    for it in range(1, iters + 1):
        M = [fold(svt(unfold(X + Y[i] / rho, i), alphas[i] / rho), i, X.shape) for i in range(nd)]
        X_new = sum(M[i] - Y[i] / rho for i in range(nd)) / nd
        X_new = np.where(fill, X_new, t.values)
        for i in range(nd):
            Y[i] = Y[i] - rho * (M[i] - X_new)
        change = np.linalg.norm(X_new - X) / max(np.linalg.norm(X), 1e-300)
        X = X_new
        if track_objective:
            objective.append(nuclear_objective(X, alphas))
        rho = min(rho * rho_growth, rho_max)
        if tol > 0 and change < tol:
            break
    return HalrtcResult(X, objective, it)


# -- SF-Kriging ----------------------------------------------------------------


@dataclass
class KrigingModel:
    intercept: float
    dist_slope: float
    freq_slope: float
    nugget: float
    sill: float
    range_m: float

    def __post_init__(self):
        if not (self.sill >= self.nugget >= 0):
            raise ValueError("need sill >= nugget >= 0")
        if self.range_m <= 0:
            raise ValueError("range_m must be positive")

    def trend(self, dist_m, f_mhz):
        """Large-scale RSS: c0 - c_d * 10 log10(d) - c_f * log10(f)."""
        return (self.intercept - self.dist_slope * 10.0 * np.log10(np.asarray(dist_m, dtype=float))
                - self.freq_slope * np.log10(np.asarray(f_mhz, dtype=float)))

    def variogram(self, h):
        h = np.asarray(h, dtype=float)
        g = self.nugget + (self.sill - self.nugget) * (1.0 - np.exp(-h / self.range_m))
        return np.where(h > 0, g, 0.0)


def _exp_variogram(h, nugget, partial_sill, range_m):
    return nugget + partial_sill * (1.0 - np.exp(-h / range_m))


def fit_trend(dist_m, f_mhz, rss) -> tuple[float, float, float]:
    """Least-squares ``rss ≈ c0 - c_d 10 log10 d - c_f log10 f``; returns (c0, c_d, c_f)."""
    d = np.asarray(dist_m, dtype=float).ravel()
    f = np.asarray(f_mhz, dtype=float).ravel()
    y = np.asarray(rss, dtype=float).ravel()
    if y.size < 3:
        raise ValueError("need at least 3 data points")
    A = np.column_stack([np.ones_like(d), -10.0 * np.log10(d), -np.log10(f)])
    coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank < 3:
        raise ValueError("rank-deficient trend design (need distinct distances and frequencies)")
    return float(coef[0]), float(coef[1]), float(coef[2])


def empirical_variogram(xy: np.ndarray, resid: np.ndarray, max_lag: float, n_bins: int = 15):
    """Binned semivariance of ``resid``; returns (bin centers, gamma, pair counts)."""
    xy = np.asarray(xy, dtype=float)
    r = np.asarray(resid, dtype=float)
    i, j = np.triu_indices(len(r), k=1)
    h = np.hypot(*(xy[i] - xy[j]).T)
    sv = 0.5 * (r[i] - r[j]) ** 2
    edges = np.linspace(0.0, max_lag, n_bins + 1)
    which = np.digitize(h, edges) - 1
    ok = (which >= 0) & (which < n_bins)
    counts = np.bincount(which[ok], minlength=n_bins)
    sums = np.bincount(which[ok], weights=sv[ok], minlength=n_bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    keep = counts > 0
    return centers[keep], sums[keep] / counts[keep], counts[keep]


def fit_variogram(xy, resid, max_lag: float = 150.0, n_bins: int = 15, max_points: int = 2000,
                  seed: int = 0) -> tuple[float, float, float]:
    """Least-squares exponential variogram; returns (nugget, sill, range_m)."""
    xy = np.asarray(xy, dtype=float)
    resid = np.asarray(resid, dtype=float)
    if len(resid) > max_points:
        pick = np.random.default_rng(seed).choice(len(resid), max_points, replace=False)
        xy, resid = xy[pick], resid[pick]
    h, g, _ = empirical_variogram(xy, resid, max_lag, n_bins)
    if len(h) == 0 or np.allclose(g, 0.0, atol=1e-12):
        return 0.0, 0.0, max_lag / 3.0
    p0 = [max(g.min(), 0.0), max(g.max(), 1e-9), max_lag / 3.0]
    try:
        (n, ps, r), _ = curve_fit(_exp_variogram, h, g, p0=p0,
                                  bounds=([0.0, 0.0, 1e-6], [np.inf, np.inf, 10 * max_lag]))
    except RuntimeError:
        n, ps, r = p0[0], p0[1] - p0[0], p0[2]
    return float(n), float(n + ps), float(r)


def kriging_fit(dist_m, f_mhz, rss, xy, seed: int = 0, max_lag: float = 150.0) -> KrigingModel:
    """Fit the trend, then an exponential variogram to the trend residuals.

    ``dist_m``: distance to the nearest transmitter per datum; ``xy``: datum
    positions in meters (for the variogram).
    """
    c0, cd, cf = fit_trend(dist_m, f_mhz, rss)
    resid = np.asarray(rss, dtype=float).ravel() - (
        c0 - cd * 10.0 * np.log10(np.asarray(dist_m, dtype=float).ravel())
        - cf * np.log10(np.asarray(f_mhz, dtype=float).ravel()))
    nugget, sill, rng = fit_variogram(xy, resid, max_lag=max_lag, seed=seed)
    return KrigingModel(c0, cd, cf, nugget, sill, rng)


def ordinary_kriging_weights(model: KrigingModel, sample_xy: np.ndarray, query_xy: np.ndarray) -> np.ndarray:
    """Weights ``(n_query, n_sample)`` solving the ordinary-kriging system in variogram form."""
    P = np.asarray(sample_xy, dtype=float).reshape(-1, 2)
    Q = np.asarray(query_xy, dtype=float).reshape(-1, 2)
    n = len(P)
    G = np.zeros((n + 1, n + 1))
    G[:n, :n] = model.variogram(np.hypot(*(P[:, None, :] - P[None, :, :]).transpose(2, 0, 1)))
    G[:n, n] = G[n, :n] = 1.0
    rhs = np.ones((n + 1, len(Q)))
    rhs[:n] = model.variogram(np.hypot(*(P[:, None, :] - Q[None, :, :]).transpose(2, 0, 1)))
    sol = np.linalg.solve(G, rhs)
    if not np.all(np.isfinite(sol)):
        raise np.linalg.LinAlgError("non-finite kriging solution")
    return sol[:n].T


def kriging_predict(model: KrigingModel, sample_xy, sample_resid, query_xy, query_dist_m,
                    f_target: float) -> np.ndarray:
    """Trend at ``f_target`` plus ordinary kriging of the observed residuals.

    Falls back to the pure trend (with a warning) when the kriging system is
    singular, e.g. for a zero sill.
    """
    trend = model.trend(query_dist_m, f_target)
    resid = np.asarray(sample_resid, dtype=float).ravel()
    if resid.size == 0:
        return trend
    if model.sill <= 0:
        if np.any(resid != 0):
            log.warning("zero-sill variogram; using trend only")
        return trend
    try:
        W = ordinary_kriging_weights(model, sample_xy, query_xy)
    except np.linalg.LinAlgError:
        log.warning("singular kriging system; using trend only")
        return trend
    return trend + W @ resid
