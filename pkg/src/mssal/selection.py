"""Choosing the number of mixture components by BIC."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from .distributions import MixtureModel
from .em import FitConfig, FitError, FitResult, _values, fit_em

log = logging.getLogger(__name__)

__all__ = ["GRecord", "SelectionReport", "bic", "count_free_params", "select_model"]


def count_free_params(G: int, p: int) -> int:
    """Free parameters of a ``G``-component, ``p``-variate MSSAL mixture.

    ``G - 1`` weights, and per component ``p`` locations, ``p`` skewness
    values, ``p`` eigenvalues and ``p (p - 1) / 2`` angles for the
    orthogonal eigenvector matrix.
    """
    if G < 1 or p < 1:
        raise ValueError("G and p must be >= 1")
    return (G - 1) + G * (3 * p + p * (p - 1) // 2)


def bic(loglik: float, rho: int, n: int) -> float:
    """``2 loglik - rho log n``; larger is better."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return 2.0 * loglik - rho * math.log(n)


@dataclass
class GRecord:
    g: int
    loglik: float | None
    rho: int
    bic: float | None
    converged: bool
    note: str = ""
    fit: FitResult | None = field(default=None, repr=False)


@dataclass
class SelectionReport:
    records: list[GRecord]
    chosen_g: int
    chosen_model: MixtureModel
    n: int

    @property
    def chosen(self) -> GRecord:
        return next(r for r in self.records if r.g == self.chosen_g)

    def table(self) -> str:
        lines = [f"{'G':>3}  {'loglik':>14}  {'rho':>4}  {'BIC':>14}  converged  note"]
        for r in self.records:
            ll = f"{r.loglik:14.4f}" if r.loglik is not None else f"{'-':>14}"
            b = f"{r.bic:14.4f}" if r.bic is not None else f"{'-':>14}"
            mark = "*" if r.g == self.chosen_g else " "
            lines.append(f"{r.g:>3}{mark} {ll}  {r.rho:>4}  {b}  {str(r.converged):>9}  {r.note}")
        return "\n".join(lines)


def select_model(data, g_min: int, g_max: int, cfg: FitConfig | None = None) -> SelectionReport:
    """Fit ``G = g_min .. g_max`` and keep the BIC-best converged fit."""
    cfg = cfg or FitConfig()
    x = _values(data)
    n, p = x.shape
    if not 1 <= g_min <= g_max < n:
        raise ValueError(f"need 1 <= g_min <= g_max < n, got {g_min}, {g_max}, n={n}")
    records = []
    for g in range(g_min, g_max + 1):
        rho = count_free_params(g, p)
        try:
            fit = fit_em(x, g, cfg)
        except FitError as err:
            log.info("G=%d: %s", g, err)
            records.append(GRecord(g, None, rho, None, False, note=str(err)))
            continue
        note = "" if fit.converged else f"not converged after {fit.n_iter} iterations"
        records.append(GRecord(g, fit.loglik, rho, bic(fit.loglik, rho, n), fit.converged, note, fit))
    eligible = [r for r in records if r.converged]
    if not eligible:
        raise FitError(f"no G in {g_min}..{g_max} produced a converged fit")
    best = max(eligible, key=lambda r: r.bic)
    model = best.fit.model
    model = MixtureModel(model.weights, model.components, model.loglik, best.bic, model.n_iter)
    return SelectionReport(records, best.g, model, n)
