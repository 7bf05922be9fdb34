"""Estimating the number of hidden nodes with BIC and the two ICL variants."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import em
from .errors import TreeAggError
from .matrices import EmpiricalCovariance

CRITERIA = ("bic", "icl_tree", "icl_joint")


def penalty(n_observed: int, n_hidden: int, n_samples: int) -> float:
    """Parameter-count penalty (p(p+1)/2 + r p + r) log(n) / 2."""
    p, r = n_observed, n_hidden
    count = p * (p + 1) / 2 + r * p + r
    return float(count * np.log(n_samples) / 2.0)


@dataclass(frozen=True)
class SelectionRow:
    n_hidden: int
    loglik: float = np.nan
    pen: float = np.nan
    bic: float = np.nan
    icl_tree: float = np.nan
    icl_joint: float = np.nan
    h_tree: float = np.nan
    h_joint: float = np.nan
    converged: bool = False
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class SelectionReport:
    rows: tuple[SelectionRow, ...]
    selected: dict[str, int | None]
    master_seed: int | None
    fits: dict[int, "em.FitResult"] = field(default_factory=dict, repr=False)

    def to_json_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "selected": dict(self.selected),
            "rows": [
                {
                    "r": row.n_hidden,
                    "loglik": row.loglik,
                    "pen": row.pen,
                    "bic": row.bic,
                    "icl_tree": row.icl_tree,
                    "icl_joint": row.icl_joint,
                    "h_tree": row.h_tree,
                    "h_joint": row.h_joint,
                    "converged": row.converged,
                    "error": row.error,
                }
                for row in self.rows
            ],
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(
                ["r", "loglik", "pen", "bic", "icl_tree", "icl_joint",
                 "h_tree", "h_joint", "converged", "error"]
            )
            for row in self.rows:
                writer.writerow(
                    [row.n_hidden] + [repr(v) for v in (
                        row.loglik, row.pen, row.bic, row.icl_tree,
                        row.icl_joint, row.h_tree, row.h_joint,
                    )] + [row.converged, row.error if row.error else ""]
                )


def _row_seeds(master_seed: int | None, count: int) -> list[int | None]:
    if master_seed is None:
        return [None] * count
    seq = np.random.SeedSequence(master_seed)
    return [int(child.generate_state(1)[0]) for child in seq.spawn(count)]


def select(
    cov_or_data,
    r_max: int = 3,
    opts: em.FitOptions | None = None,
    master_seed: int | None = 0,
    keep_fits: bool = False,
) -> SelectionReport:
    """Fit r = 0..r_max and rank the criteria; rows are seeded independently."""
    if isinstance(cov_or_data, EmpiricalCovariance):
        cov = cov_or_data
    else:
        cov = EmpiricalCovariance.from_data(np.asarray(cov_or_data, dtype=float))
    if r_max < 0:
        raise ValueError("r_max must be nonnegative")
    base = opts or em.FitOptions()
    seeds = _row_seeds(master_seed, r_max + 1)

    rows: list[SelectionRow] = []
    fits: dict[int, em.FitResult] = {}
    for r in range(r_max + 1):
        row_opts = em.FitOptions(
            max_iter=base.max_iter,
            tol=base.tol,
            eig_floor=base.eig_floor,
            seed=seeds[r],
            restarts=base.restarts,
        )
        try:
            result = em.fit(cov, r, opts=row_opts)
        except TreeAggError as exc:
            warnings.warn(f"fit with r={r} failed: {exc}")
            rows.append(SelectionRow(n_hidden=r, error=str(exc)))
            continue
        pen = penalty(cov.size, r, cov.n)
        bic = result.loglik - pen
        rows.append(
            SelectionRow(
                n_hidden=r,
                loglik=result.loglik,
                pen=pen,
                bic=bic,
                icl_tree=bic - result.h_tree,
                icl_joint=bic - result.h_joint,
                h_tree=result.h_tree,
                h_joint=result.h_joint,
                converged=result.converged,
            )
        )
        if keep_fits:
            fits[r] = result

    selected: dict[str, int | None] = {}
    for criterion in CRITERIA:
        ok = [row for row in rows if row.ok]
        if not ok:
            selected[criterion] = None
            continue
        selected[criterion] = max(ok, key=lambda row: (getattr(row, criterion), -row.n_hidden)).n_hidden
    return SelectionReport(tuple(rows), selected, master_seed, fits)
