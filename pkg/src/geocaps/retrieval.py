"""Ranking of true matches and recall@K / recall@top-p% metrics.

Ties are resolved optimistically: a gallery item at exactly the same distance
as the true match does not push it down the ranking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ContractError, ShapeError


def _sq_dist_rows(query: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    diff = gallery - query
    return np.sum(diff * diff, axis=-1)


def distance_matrix(queries: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, one row per query, each computed like a single-query lookup."""
    queries = np.asarray(queries, dtype=np.float64)
    gallery = np.asarray(gallery, dtype=np.float64)
    if queries.ndim != 2 or gallery.ndim != 2 or queries.shape[1] != gallery.shape[1]:
        raise ShapeError(f"descriptor dimensions differ: {queries.shape} vs {gallery.shape}")
    return np.stack([_sq_dist_rows(q, gallery) for q in queries]) if len(queries) else np.zeros((0, len(gallery)))


def rank_of_true_match(query, gallery, true_index: int) -> int:
    """1 + number of gallery items strictly closer to ``query`` than ``gallery[true_index]``."""
    gallery = np.asarray(gallery, dtype=np.float64)
    if gallery.ndim != 2 or len(gallery) == 0:
        raise ContractError("gallery must be a non-empty [N, D] array")
    if not 0 <= true_index < len(gallery):
        raise IndexError(f"true_index {true_index} outside gallery of size {len(gallery)}")
    d = _sq_dist_rows(np.asarray(query, dtype=np.float64), gallery)
    return int(1 + np.count_nonzero(d < d[true_index]))


def ranks_from_distances(d: np.ndarray, true_index=None) -> np.ndarray:
    """Rank of each row's true match; by default query ``i`` matches gallery ``i``."""
    d = np.asarray(d)
    rows = np.arange(d.shape[0])
    true_index = rows if true_index is None else np.asarray(true_index)
    target = d[rows, true_index][:, None]
    return 1 + np.count_nonzero(d < target, axis=1)


def recall_at_k(ranks, k: int) -> float:
    if k < 1:
        raise ContractError(f"K must be >= 1, got {k}")
    ranks = np.asarray(ranks)
    return float(np.count_nonzero(ranks <= k) / len(ranks)) if len(ranks) else 0.0


def top_percent_k(gallery_size: int, p: float) -> int:
    """Number of gallery items inside the top ``p`` percent, rounded up."""
    if not 0 < p <= 100:
        raise ContractError(f"percent must be in (0, 100], got {p}")
    return max(1, math.ceil(Fraction(str(p)) * gallery_size / 100))


def recall_at_top_percent(ranks, gallery_size: int, p: float) -> float:
    return recall_at_k(ranks, top_percent_k(gallery_size, p))


@dataclass
class RecallReport:
    n_queries: int
    gallery_size: int
    ranks: np.ndarray
    recall_at_k: dict[int, float] = field(default_factory=dict)
    recall_at_top_percent: dict[float, float] = field(default_factory=dict)

    def rows(self) -> list[tuple[str, str, str]]:
        """(metric, K_or_percent, value) rows, values at 9 significant digits."""
        out = [("recall@K", str(k), f"{v:.9g}") for k, v in sorted(self.recall_at_k.items())]
        out += [("recall@top%", _fmt_percent(p), f"{v:.9g}") for p, v in sorted(self.recall_at_top_percent.items())]
        return out


def _fmt_percent(p: float) -> str:
    return str(int(p)) if float(p).is_integer() else repr(float(p))


def report_from_distances(d: np.ndarray, k_list=(1, 5, 10), percent_list=(1, 10)) -> RecallReport:
    d = np.asarray(d)
    ranks = ranks_from_distances(d)
    n, g = d.shape
    return RecallReport(
        n_queries=n,
        gallery_size=g,
        ranks=ranks,
        recall_at_k={int(k): recall_at_k(ranks, int(k)) for k in k_list},
        recall_at_top_percent={float(p): recall_at_top_percent(ranks, g, p) for p in percent_list},
    )


def recall_curve(ground, satellite, k_list=tuple(range(1, 81)), percent_list=(1, 10)) -> RecallReport:
    """Rank every ground query against the satellite gallery; query ``i`` matches gallery ``i``."""
    ground = np.asarray(ground)
    satellite = np.asarray(satellite)
    if len(ground) != len(satellite):
        raise ShapeError(f"{len(ground)} queries but {len(satellite)} gallery items; sets must be aligned")
    percents = sorted(set(float(p) for p in percent_list) | {1.0, 10.0})
    return report_from_distances(distance_matrix(ground, satellite), k_list, percents)
