"""EM estimation for finite mixtures of MSSAL distributions.

Every kernel here works on stacked parameter arrays with an optional
leading batch axis, so that all random starts of a fit advance in lock
step.  Shapes, with ``...`` the batch axes::

    weights (..., G)        mu, beta, a (..., G, p)       d (..., G, p, p)
    zhat    (..., G, n)     e1, e2      (..., G, n, p)

The public ``LatentExpectations`` exposes the observation-major layout
``(n, G)`` / ``(n, G, p)``.

One EM iteration is a conditional (generalised) M-step in the order
pi -> mu (old beta) -> beta (new mu) -> D (majorisation-minimisation) ->
A, each step non-decreasing the expected complete-data log-likelihood.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray

from .distributions import (
    B_FLOOR,
    DataMatrix,
    MixtureModel,
    _gig_moments_array,
    _rotated_log_density,
)

log = logging.getLogger(__name__)

A_FLOOR = 1e-12
RIDGE = 1e-10

__all__ = [
    "FitConfig",
    "FitResult",
    "FitError",
    "LatentExpectations",
    "aitken_converged",
    "e_step",
    "fit_em",
    "map_classify",
    "mm_objective",
    "mm_rotation_update",
    "run_em",
    "update_a",
    "update_mu_beta",
    "update_pi",
]


class FitError(RuntimeError):
    """Raised when no random start yields a usable fit."""


@dataclass(frozen=True)
class FitConfig:
    """Estimation settings.

    ``min_weight`` is a fraction of ``n``; ``None`` means ``1 / (10 n)``.
    ``max_iter`` counts E-steps, and ``check_convergence=False`` runs
    exactly ``max_iter`` of them.
    """

    n_starts: int = 50
    max_iter: int = 1000
    aitken_eps: float = 1e-6
    mm_max_iter: int = 20
    mm_tol: float = 1e-8
    b_floor: float = B_FLOOR
    min_weight: float | None = None
    seed: int = 0
    check_convergence: bool = True

    def __post_init__(self):
        for name in ("n_starts", "max_iter", "mm_max_iter"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("aitken_eps", "mm_tol", "b_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.min_weight is not None and not self.min_weight > 0:
            raise ValueError("min_weight must be > 0")

    def min_count(self, n: int) -> float:
        frac = self.min_weight if self.min_weight is not None else 1.0 / (10 * n)
        return frac * n


@dataclass
class Diagnostics:
    clamp_count: int = 0
    ridge_count: int = 0
    svd_failures: int = 0
    mm_ascents: int = 0
    a_floored: int = 0


@dataclass(frozen=True)
class LatentExpectations:
    """Responsibilities and conditional latent-weight moments."""

    zhat: NDArray[np.float64]
    e1: NDArray[np.float64]
    e2: NDArray[np.float64]

    @classmethod
    def _from_internal(cls, zhat, e1, e2):
        return cls(np.swapaxes(zhat, -1, -2), np.swapaxes(e1, -2, -3), np.swapaxes(e2, -2, -3))

    def _internal(self):
        return (
            np.swapaxes(self.zhat, -1, -2),
            np.swapaxes(self.e1, -2, -3),
            np.swapaxes(self.e2, -2, -3),
        )


@dataclass
class FitResult:
    """Best-of-starts EM fit."""

    model: MixtureModel
    loglik_trace: list[float]
    map_labels: NDArray[np.int64]
    converged: bool
    n_iter: int
    clamp_count: int
    status: str = "converged"
    expectations: LatentExpectations | None = None
    start_logliks: list[float | None] = field(default_factory=list)

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]


class Params(NamedTuple):
    weights: NDArray
    mu: NDArray
    beta: NDArray
    d: NDArray
    a: NDArray

    def take(self, idx):
        return Params(*(arr[idx] for arr in self))


def _t(m):
    return np.swapaxes(m, -1, -2)


# ----------------------------------------------------------------------------
# Reductions.  Summing over a short trailing axis with ``ndarray.sum`` is an
# order of magnitude slower than the equivalent matmul for these shapes.
# ----------------------------------------------------------------------------


def _wsum(w, arr):
    """``sum_i w[..., i] * arr[..., i, :]`` for ``w (..., n)``, ``arr (..., n, p)``."""
    return (w[..., None, :] @ arr)[..., 0, :]


def _rowsum(arr):
    """Sum over the last axis."""
    return arr @ np.ones(arr.shape[-1])


def _rowmax(arr):
    """Max over a short last axis."""
    if arr.shape[-1] > 16:
        return arr.max(axis=-1)
    out = arr[..., 0].copy()
    for j in range(1, arr.shape[-1]):
        np.maximum(out, arr[..., j], out=out)
    return out


def _rotate(v, d):
    """``D' v`` for vectors stacked as ``(..., p)``."""
    return (v[..., None, :] @ d)[..., 0, :]


def _unrotate(v, d):
    """``D v`` for vectors stacked as ``(..., p)``."""
    return (d @ v[..., None])[..., 0]


# ----------------------------------------------------------------------------
# E-step
# ----------------------------------------------------------------------------


def _e_step(x, prm: Params, b_floor):
    """Return ``zhat, e1, e2, loglik, n_clamped`` for stacked parameters."""
    y = (x - prm.mu[..., None, :]) @ prm.d  # (..., G, n, p)
    lam = _rotate(prm.beta, prm.d)
    a = prm.a
    alpha = a * lam
    gamma = np.sqrt(alpha**2 + 2.0 * a)
    # |y| (gamma - alpha sign y) / a == |y| gamma / a - y alpha / a
    expo = np.abs(y) @ (gamma / a)[..., :, None] - y @ (alpha / a)[..., :, None]
    with np.errstate(divide="ignore"):
        const = -_rowsum(np.log(gamma)) + np.log(prm.weights)
    logw = const[..., None] - expo[..., 0]  # (..., G, n)
    m = logw.max(axis=-2, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    lse = m + np.log(np.exp(logw - m).sum(axis=-2, keepdims=True))
    zhat = np.exp(logw - lse)
    loglik = _rowsum(lse[..., 0, :])

    d_par = (2.0 + a * lam**2)[..., None, :]
    b_par = y**2 / a[..., None, :]
    e1, e2, clamped = _gig_moments_array(d_par, b_par, 0.5, b_floor)
    return zhat, e1, e2, loglik, clamped.sum(axis=(-1, -2, -3))


def e_step(
    data: DataMatrix | NDArray, model: MixtureModel, cfg: FitConfig | None = None
) -> tuple[LatentExpectations, float]:
    """Responsibilities, GIG moments and observed-data log-likelihood."""
    cfg = cfg or FitConfig()
    x = _values(data)
    if x.shape[1] != model.p:
        raise ValueError("data dimension does not match model")
    prm = Params(*model.stacked())
    zhat, e1, e2, ll, _ = _e_step(x, prm, cfg.b_floor)
    if not np.isfinite(ll):
        raise FitError("non-finite log-likelihood in E-step")
    return LatentExpectations._from_internal(zhat, e1, e2), float(ll)


# ----------------------------------------------------------------------------
# M-step pieces
# ----------------------------------------------------------------------------


def update_pi(expect: LatentExpectations | NDArray) -> NDArray:
    """``pi_g = n_g / n`` with ``n_g = sum_i zhat_ig``."""
    zhat = expect.zhat if isinstance(expect, LatentExpectations) else np.asarray(expect)
    return zhat.sum(axis=0) / zhat.shape[0]


def _update_mu_beta(x, zhat, e1, e2, prm: Params, diag: Diagnostics | None = None):
    ng = _rowsum(zhat)
    d, a = prm.d, prm.a
    lam_old = _rotate(prm.beta, d)
    # sum_i z Omega_i^{-1} = D diag(s) D',  sum_i z Omega_i = D diag(t) D'
    s = _wsum(zhat, e2) / a
    t = a * _wsum(zhat, e1)
    xr = x @ d  # rows D'x_i
    rhs = _wsum(zhat, e2 * xr) / a - ng[..., None] * lam_old
    small = (s < RIDGE) | (t < RIDGE)
    if np.any(small):
        if diag is not None:
            diag.ridge_count += int(small.sum())
        s = s + RIDGE * (s < RIDGE)
        t = t + RIDGE * (t < RIDGE)
    mu = _unrotate(rhs / s, d)
    sx = zhat @ x
    beta = _unrotate(_rotate(sx - ng[..., None] * mu, d) / t, d)
    return mu, beta


def update_mu_beta(
    data, expect: LatentExpectations, model_prev: MixtureModel
) -> tuple[NDArray, NDArray]:
    """Location then skewness updates, stacked as ``(G, p)`` arrays.

    ``mu`` is solved with the previous ``beta``; ``beta`` then uses the new
    ``mu``.
    """
    zhat, e1, e2 = expect._internal()
    return _update_mu_beta(_values(data), zhat, e1, e2, Params(*model_prev.stacked()))


class _MMTerms(NamedTuple):
    resid: NDArray  # x_i - mu, (..., G, n, p)
    zm: NDArray  # z_i diag(M_i), M_i = diag(E2_i) / A
    zm_max: NDArray  # z_i max_j M_ij, (..., G, n, 1)
    zn_sum: NDArray  # sum_i z_i diag(N_i), N_i = A diag(E1_i)
    zn_max_sum: NDArray  # sum_i z_i max_j N_ij
    beta: NDArray


def _mm_terms(x, zhat, e1, e2, a, mu, beta):
    m = e2 / a[..., None, :]
    nvec = a[..., None, :] * e1
    return _MMTerms(
        resid=x - mu[..., None, :],
        zm=zhat[..., None] * m,
        zm_max=(zhat * _rowmax(m))[..., None],
        zn_sum=_wsum(zhat, nvec),
        zn_max_sum=_rowsum(zhat * _rowmax(nvec)),
        beta=beta,
    )


def _mm_objective(d, tm: _MMTerms):
    y = tm.resid @ d
    lam = _rotate(tm.beta, d)
    return _rowsum(_rowsum(tm.zm * y**2)) + _rowsum(tm.zn_sum * lam**2)


def _polar(f):
    """``argmax_D tr(F D)`` over orthogonal ``D``: ``D = R P'`` for
    ``F = P S R'``."""
    u, _, vh = np.linalg.svd(f)
    return _t(vh) @ _t(u)


def _mm_rotation(x, zhat, e1, e2, prm: Params, mu, beta, cfg: FitConfig, diag=None, trace=None):
    """Minimise ``sum_i tr(D M_i D' W_i) + tr(D N_i D' B_i)`` over orthogonal D.

    ``M_i = diag(E2_i) A^-1``, ``N_i = A diag(E1_i)``, ``W_i`` and ``B_i``
    are the responsibility-weighted outer products of ``x_i - mu`` and
    ``beta``.  Each inner iteration applies two linear majorisations (one
    bounding ``W_i``, one bounding ``M_i`` / ``N_i`` by their largest
    eigenvalue) and solves each by an SVD.
    """
    tm = _mm_terms(x, zhat, e1, e2, prm.a, mu, beta)
    resid, zm = tm.resid, tm.zm
    r2 = _rowsum(resid**2)
    zm_r2 = _wsum(r2, zm)
    bb = _rowsum(beta**2)
    brow = beta[..., None, :]
    f1_diag = zm_r2 + bb[..., None] * tm.zn_sum
    zm_gap = tm.zm_max - zm
    zn_gap = tm.zn_max_sum[..., None] - tm.zn_sum

    d = prm.d.copy()
    f_prev = _mm_objective(d, tm)
    if trace is not None:
        trace.append(f_prev.copy())
    active = np.ones(f_prev.shape, dtype=bool)
    for _ in range(cfg.mm_max_iter):
        dt = _t(d)
        y = resid @ d
        lam = _rotate(beta, d)
        # bound W_i by its largest eigenvalue z_i |r_i|^2 (and B_i by z_i |beta|^2)
        f1 = f1_diag[..., :, None] * dt - _t(zm * y) @ resid - (tm.zn_sum * lam)[..., :, None] * brow
        try:
            d_star = _polar(f1)
            # bound M_i, N_i by their largest eigenvalues
            y_s = resid @ d_star
            lam_s = _rotate(beta, d_star)
            f2 = _t(zm_gap * y_s) @ resid + (zn_gap * lam_s)[..., :, None] * brow
            d_new = _polar(f2)
        except np.linalg.LinAlgError:
            if diag is not None:
                diag.svd_failures += 1
            break
        f_new = _mm_objective(d_new, tm)
        rise = f_new - f_prev > 1e-8 * np.maximum(1.0, np.abs(f_prev))
        if diag is not None:
            diag.mm_ascents += int((rise & active).sum())
        keep = active & ~rise
        d = np.where(keep[..., None, None], d_new, d)
        f_cur = np.where(keep, f_new, f_prev)
        if trace is not None:
            trace.append(f_cur.copy())
        active = keep & (np.abs(f_cur - f_prev) >= cfg.mm_tol)
        f_prev = f_cur
        if not active.any():
            break
    return d


def mm_objective(data, expect: LatentExpectations, model_prev: MixtureModel, mu, beta, d):
    """Value of the rotation objective (without its constant) at ``d``."""
    zhat, e1, e2 = expect._internal()
    a = model_prev.stacked()[4]
    tm = _mm_terms(_values(data), zhat, e1, e2, a, np.asarray(mu), np.asarray(beta))
    return _mm_objective(np.asarray(d), tm)


def mm_rotation_update(
    data,
    expect: LatentExpectations,
    model_prev: MixtureModel,
    mu_new,
    beta_new,
    cfg: FitConfig | None = None,
    trace: list | None = None,
) -> NDArray:
    """Updated eigenvector matrices, stacked ``(G, p, p)``.

    If ``trace`` is given, the objective per component is appended after
    every inner iteration (first entry: the starting value).
    """
    cfg = cfg or FitConfig()
    zhat, e1, e2 = expect._internal()
    prm = Params(*model_prev.stacked())
    return _mm_rotation(
        _values(data), zhat, e1, e2, prm, np.asarray(mu_new), np.asarray(beta_new), cfg, trace=trace
    )


def _update_a(x, zhat, e1, e2, d, mu, beta, a_prev, diag=None):
    ng = _rowsum(zhat)
    v = (x - mu[..., None, :]) @ d
    lam = _rotate(beta, d)
    num = _wsum(zhat, e2 * v**2)
    den = ng[..., None] / a_prev + lam**2 * _wsum(zhat, e1)
    a = np.sqrt(num / den)
    low = ~(a >= A_FLOOR)
    if np.any(low):
        if diag is not None:
            diag.a_floored += int(low.sum())
        a = np.where(low, A_FLOOR, a)
    return a, low


def update_a(data, expect: LatentExpectations, d_new, mu_new, beta_new, a_prev) -> NDArray:
    """One sweep of the eigenvalue fixed point

    ``a_j <- sqrt(sum_i E2 z v^2 / (n_g / a_j + lam_j^2 sum_i E1 z))``

    which moves each ``a_j`` monotonically towards the exact maximiser
    without overshooting it.  Values below ``1e-12`` are floored.
    """
    zhat, e1, e2 = expect._internal()
    a, _ = _update_a(
        _values(data), zhat, e1, e2, np.asarray(d_new), np.asarray(mu_new),
        np.asarray(beta_new), np.asarray(a_prev, dtype=float),
    )
    return a


def _m_step(x, zhat, e1, e2, prm: Params, cfg: FitConfig, diag=None):
    weights = _rowsum(zhat) / x.shape[0]
    mu, beta = _update_mu_beta(x, zhat, e1, e2, prm, diag)
    d = _mm_rotation(x, zhat, e1, e2, prm, mu, beta, cfg, diag)
    a, low = _update_a(x, zhat, e1, e2, d, mu, beta, prm.a, diag)
    return Params(weights, mu, beta, d, a), low.any(axis=-1).any(axis=-1)


# ----------------------------------------------------------------------------
# Convergence, classification
# ----------------------------------------------------------------------------


def aitken_converged(l_prev2: float, l_prev: float, l_curr: float, eps: float) -> bool:
    """Aitken-accelerated stopping rule.

    With ``a = (l_curr - l_prev) / (l_prev - l_prev2)`` the asymptotic
    estimate is ``l_inf = l_prev + (l_curr - l_prev) / (1 - a)``; converged
    iff ``0 <= l_inf - l_curr < eps``.
    """
    step = l_curr - l_prev
    prev_step = l_prev - l_prev2
    if prev_step == 0 or prev_step == step:
        return abs(step) < eps
    acc = step / prev_step
    l_inf = l_prev + step / (1.0 - acc)
    return bool(0 <= l_inf - l_curr < eps)


def map_classify(zhat) -> NDArray[np.int64]:
    """1-based MAP labels; ties go to the lowest component index."""
    zhat = np.asarray(zhat)
    return np.argmax(zhat, axis=1) + 1


# ----------------------------------------------------------------------------
# Driver
# ----------------------------------------------------------------------------


def _values(data) -> NDArray:
    return data.values if isinstance(data, DataMatrix) else np.asarray(data, dtype=float)


def _init_params(x, labels, G, a_scale):
    """Moment-based start from a hard partition: sample means, zero skew,
    eigendecomposition of the sample covariance."""
    n, p = x.shape
    weights = np.empty(G)
    mu = np.empty((G, p))
    d = np.empty((G, p, p))
    a = np.empty((G, p))
    for g in range(G):
        xg = x[labels == g]
        weights[g] = len(xg) / n
        mu[g] = xg.mean(axis=0) if len(xg) else x.mean(axis=0)
        if len(xg) > 1:
            cov = np.atleast_2d(np.cov(xg, rowvar=False, bias=True))
        else:
            cov = np.diag(a_scale)
        vals, vecs = np.linalg.eigh(cov)
        d[g] = vecs
        a[g] = np.maximum(vals, 1e-6 * a_scale.mean())
    return Params(weights, mu, np.zeros((G, p)), d, a)


def _one_hot(labels, G):
    z = np.zeros((G, labels.size))
    z[labels, np.arange(labels.size)] = 1.0
    return z


def run_em(data, init_labels, cfg: FitConfig | None = None, G: int | None = None) -> list[dict]:
    """Run EM from one or more hard initial partitions in lock step.

    Parameters
    ----------
    init_labels : (S, n) or (n,) integer array
        0-based starting partitions, one row per start.

    Returns
    -------
    list of dict
        Per start: ``params``, ``zhat``, ``e1``, ``e2``, ``trace``,
        ``status`` (``converged``, ``max_iter``, ``empty``, ``degenerate``
        or ``nonfinite``), ``diag``.
    """
    cfg = cfg or FitConfig()
    x = _values(data)
    n, p = x.shape
    init_labels = np.atleast_2d(np.asarray(init_labels, dtype=int))
    S = init_labels.shape[0]
    G = G or int(init_labels.max()) + 1
    a_scale = np.maximum(x.var(axis=0), 1e-12)
    min_count = cfg.min_count(n)

    inits = [_init_params(x, lab, G, a_scale) for lab in init_labels]
    prm = Params(*(np.stack(arrs) for arrs in zip(*inits)))
    zhat = np.stack([_one_hot(lab, G) for lab in init_labels])
    e1 = np.ones((S, G, n, p))
    e2 = np.ones((S, G, n, p))

    results: list[dict | None] = [None] * S
    traces: list[list[float]] = [[] for _ in range(S)]
    diags = [Diagnostics() for _ in range(S)]
    ids = np.arange(S)

    def retire(mask, status, state):
        for k in np.flatnonzero(mask):
            s = ids[k]
            zh, ee1, ee2, pp = state
            results[s] = dict(
                params=pp.take(k), zhat=zh[k], e1=ee1[k], e2=ee2[k],
                trace=traces[s], status=status, diag=diags[s],
            )

    empty = (zhat.sum(axis=-1) < min_count).any(axis=-1)
    if empty.any():
        retire(empty, "empty", (zhat, e1, e2, prm))
        keep = ~empty
        ids, prm = ids[keep], prm.take(keep)
        zhat, e1, e2 = zhat[keep], e1[keep], e2[keep]

    it = 0
    while ids.size and it < cfg.max_iter:
        it += 1
        batch_diag = Diagnostics()
        new_prm, degenerate = _m_step(x, zhat, e1, e2, prm, cfg, batch_diag)
        with np.errstate(over="ignore", invalid="ignore"):
            zhat_n, e1_n, e2_n, ll, clamp = _e_step(x, new_prm, cfg.b_floor)
        done = np.zeros(ids.size, dtype=bool)
        status = np.full(ids.size, "", dtype=object)
        for k, s in enumerate(ids):
            diags[s].clamp_count += int(clamp[k])
            traces[s].append(float(ll[k]))
        bad = ~np.isfinite(ll) | ~np.all(np.isfinite(new_prm.a), axis=(-1, -2))
        status[bad] = "nonfinite"
        status[degenerate & ~bad] = "degenerate"
        emp = (zhat_n.sum(axis=-1) < min_count).any(axis=-1) & (status == "")
        status[emp] = "empty"
        if cfg.check_convergence:
            for k, s in enumerate(ids):
                tr = traces[s]
                if status[k] == "" and len(tr) >= 3 and aitken_converged(*tr[-3:], cfg.aitken_eps):
                    status[k] = "converged"
        done = status != ""
        # failures keep the state that produced them; converged keep the new one
        state = (zhat_n, e1_n, e2_n, new_prm)
        for label in ("converged", "degenerate", "empty", "nonfinite"):
            retire(status == label, label, state)
        keep = ~done
        ids = ids[keep]
        prm = new_prm.take(keep)
        zhat, e1, e2 = zhat_n[keep], e1_n[keep], e2_n[keep]
    if ids.size:
        retire(np.ones(ids.size, dtype=bool), "max_iter", (zhat, e1, e2, prm))
    return results


def _to_model(prm: Params, **meta) -> MixtureModel:
    return MixtureModel.from_arrays(prm.weights, prm.mu, prm.beta, prm.d, prm.a, **meta)


def random_partitions(n: int, G: int, cfg: FitConfig) -> NDArray[np.int64]:
    """Uniform random 0-based labels; start ``s`` uses seed ``cfg.seed + s``."""
    return np.stack(
        [np.random.default_rng(cfg.seed + s).integers(0, G, size=n) for s in range(cfg.n_starts)]
    )


def fit_em(data, G: int, cfg: FitConfig | None = None, init_labels=None) -> FitResult:
    """Fit a ``G``-component MSSAL mixture, keeping the best of
    ``cfg.n_starts`` random starts by final log-likelihood.

    Starts ending ``degenerate`` (a floored eigenvalue), ``empty`` or
    ``nonfinite`` are discarded. The best converged start wins; starts that
    hit ``max_iter`` are used only when none converged, and the result is
    then reported as not converged.
    """
    cfg = cfg or FitConfig()
    x = _values(data)
    n, p = x.shape
    if not n > G:
        raise ValueError(f"need n > G, got n={n}, G={G}")
    if init_labels is None:
        # every random partition into one block is the same start
        init_labels = random_partitions(n, G, cfg) if G > 1 else np.zeros((1, n), dtype=int)
    runs = run_em(x, init_labels, cfg, G)
    ok = [r for r in runs if r["status"] in ("converged", "max_iter") and r["trace"]]
    if not ok:
        counts: dict[str, int] = {}
        for r in runs:
            counts[r["status"]] = counts.get(r["status"], 0) + 1
        raise FitError(f"all {len(runs)} starts failed for G={G}: {counts}")
    # a start still climbing at max_iter has no final value yet, so it only
    # competes when no start converged
    pool = [r for r in ok if r["status"] == "converged"] or ok
    best = max(pool, key=lambda r: r["trace"][-1])
    converged = best["status"] == "converged"
    model = _to_model(best["params"], loglik=best["trace"][-1], n_iter=len(best["trace"]))
    expect = LatentExpectations._from_internal(best["zhat"], best["e1"], best["e2"])
    log.debug("G=%d best loglik %.6f (%s)", G, best["trace"][-1], best["status"])
    return FitResult(
        model=model,
        loglik_trace=list(best["trace"]),
        map_labels=map_classify(expect.zhat),
        converged=converged,
        n_iter=len(best["trace"]),
        clamp_count=best["diag"].clamp_count,
        status=best["status"],
        expectations=expect,
        start_logliks=[r["trace"][-1] if r["trace"] else None for r in runs],
    )
