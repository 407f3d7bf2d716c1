"""Same-person nearest neighbors and locally linear reconstruction weights.

For every sample we find its K nearest same-person neighbors in feature
space (a KD-tree per person group), then solve a ridge-regularized,
sum-to-one constrained least-squares problem for the weights that best
reconstruct the sample's feature vector from its neighbors' features. The
weighted average of neighbor training labels under those weights is the
sample's "neighboring label".

Weights may be negative; the constraint is only that they sum to one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "NeighborConfig",
    "NeighborSet",
    "knn_same_person",
    "reconstruction_weights",
    "build_neighbor_sets",
    "combine_neighbor_values",
    "neighboring_labels",
]

logger = logging.getLogger(__name__)


@dataclass
class NeighborConfig:
    k: int = 4
    ridge_lambda: float = 1e-3

    def validate(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.ridge_lambda < 0:
            raise ValueError(f"ridge_lambda must be >= 0, got {self.ridge_lambda}")


@dataclass
class NeighborSet:
    """Neighbors of one sample. ``degenerate`` marks person groups with fewer
    than ``k`` other members (including none at all). ``neighbor_rows`` holds
    the neighbors' row positions in the arrays the set was built from."""

    sample_id: int
    neighbor_ids: list[int]
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    degenerate: bool = False
    neighbor_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def _brute_force_group(feats: np.ndarray, rows: np.ndarray, pos: int, k_want: int):
    d2 = np.sum((feats - feats[pos]) ** 2, axis=1)
    d2[pos] = np.inf
    order = np.lexsort((rows, d2))
    return order[:k_want]


def knn_same_person(features: np.ndarray, person_ids: np.ndarray, k: int) -> list[np.ndarray]:
    """Per-sample row indices of the k nearest same-person samples.

    Neighbors are ordered by (Euclidean distance, sample row) ascending; ties
    resolve to the lower row so runs are reproducible. Groups with fewer than
    k other members yield all of them (possibly an empty list).
    """
    features = np.asarray(features, dtype=float)
    person_ids = np.asarray(person_ids)
    n = features.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples")
    if not np.all(np.isfinite(features)):
        raise ValueError("features must be finite")
    result: list[np.ndarray] = [np.zeros(0, dtype=int)] * n
    for person in np.unique(person_ids):
        rows = np.flatnonzero(person_ids == person)
        m = rows.size
        if m == 1:
            continue
        feats = features[rows]
        k_want = min(k, m - 1)
        # Query a few extra so exact-distance ties at the boundary can be
        # resolved by row order; fall back to a full scan when even that is
        # ambiguous.
        q = min(m, k_want + 9)  # q >= k_want + 1 >= 2, so query output is 2-D
        tree = cKDTree(feats)
        dist, idx = tree.query(feats, k=q)
        # Drop each row's self entry; q >= k_want + 1 guarantees k_want
        # non-self candidates remain, already distance-sorted per row.
        notself = idx != np.arange(m)[:, None]
        rank = np.cumsum(notself, axis=1)
        selected = notself & (rank <= k_want)
        sel_idx = idx[selected].reshape(m, k_want)
        sel_dist = dist[selected].reshape(m, k_want)
        # Exact-distance ties can make the tree's pick disagree with the
        # documented (distance, row) order; recompute those rows exhaustively.
        boundary = sel_dist[:, -1]
        ambiguous = np.any(notself & ~selected & (dist == boundary[:, None]), axis=1)
        if q < m:
            ambiguous |= dist[:, -1] == boundary
        if k_want > 1:
            ambiguous |= np.any(sel_dist[:, 1:] == sel_dist[:, :-1], axis=1)
        for pos in np.flatnonzero(ambiguous):
            sel_idx[pos] = _brute_force_group(feats, rows, int(pos), k_want)
        chosen = rows[sel_idx]
        for pos in range(m):
            result[rows[pos]] = chosen[pos]
    return result


def reconstruction_weights(
    feature: np.ndarray, neighbor_features: np.ndarray, ridge_lambda: float
) -> np.ndarray:
    """Closed-form sum-to-one reconstruction weights for one sample.

    Builds the K x K Gram matrix of rowwise differences between the sample's
    feature and each neighbor feature, adds ``ridge_lambda`` on the diagonal,
    and solves against the all-ones vector, normalizing so weights sum to 1.
    With ``ridge_lambda == 0`` a singular Gram matrix falls back to the
    stationarity system of the constrained problem, which still has a unique
    solution for merely rank-deficient geometries (e.g. a query at the exact
    midpoint of two neighbors); a singular system there raises with advice to
    use a positive ridge.
    """
    feature = np.asarray(feature, dtype=float)
    neighbor_features = np.atleast_2d(np.asarray(neighbor_features, dtype=float))
    diff = feature[None, :] - neighbor_features
    gram = diff @ diff.T
    k = gram.shape[0]
    gram[np.diag_indices_from(gram)] += ridge_lambda
    ones = np.ones(k)
    try:
        w = np.linalg.solve(gram, ones)
        denom = w.sum()
        if not np.isfinite(denom) or denom == 0.0:
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = gram
        kkt[:k, k] = 1.0
        kkt[k, :k] = 1.0
        rhs = np.zeros(k + 1)
        rhs[k] = 1.0
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError(
                "singular reconstruction system; use ridge_lambda > 0"
            ) from None
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError(
                "ill-conditioned reconstruction system; use ridge_lambda > 0"
            )
        return sol[:k]
    return w / denom


def _batched_weights(diffs: np.ndarray, ridge_lambda: float) -> np.ndarray:
    # diffs: (B, K, d) rowwise feature differences for B samples at once.
    gram = diffs @ diffs.transpose(0, 2, 1)
    k = gram.shape[1]
    gram[:, np.arange(k), np.arange(k)] += ridge_lambda
    ones = np.ones((gram.shape[0], k, 1))
    try:
        w = np.linalg.solve(gram, ones)[:, :, 0]
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(
            "singular reconstruction system; use ridge_lambda > 0"
        ) from None
    return w / w.sum(axis=1, keepdims=True)


def build_neighbor_sets(
    features: np.ndarray,
    person_ids: np.ndarray,
    sample_ids: np.ndarray,
    config: NeighborConfig,
    uniform_weights: bool = False,
) -> list[NeighborSet]:
    """KNN plus reconstruction weights for every sample.

    ``uniform_weights`` replaces the solved weights with 1/K (used by the
    reconstruction-weighting ablation). Neighbor ids refer to ``sample_ids``.
    """
    config.validate()
    features = np.asarray(features, dtype=float)
    sample_ids = np.asarray(sample_ids)
    neighbor_rows = knn_same_person(features, person_ids, config.k)
    sets: list[NeighborSet] = [None] * len(neighbor_rows)  # type: ignore[list-item]

    by_count: dict[int, list[int]] = {}
    for i, rows in enumerate(neighbor_rows):
        by_count.setdefault(rows.size, []).append(i)

    n_degenerate = 0
    for count, members in by_count.items():
        members_arr = np.array(members, dtype=int)
        degenerate = count < config.k
        n_degenerate += len(members) if degenerate else 0
        if count == 0:
            for i in members:
                sets[i] = NeighborSet(int(sample_ids[i]), [], np.zeros(0), True)
            continue
        rows_mat = np.stack([neighbor_rows[i] for i in members])
        if uniform_weights:
            weights = np.full((len(members), count), 1.0 / count)
        else:
            diffs = features[members_arr][:, None, :] - features[rows_mat]
            weights = _batched_weights(diffs, config.ridge_lambda)
        ids_mat = sample_ids[rows_mat]
        for j, i in enumerate(members):
            sets[i] = NeighborSet(
                sample_id=int(sample_ids[i]),
                neighbor_ids=[int(v) for v in ids_mat[j]],
                weights=weights[j],
                degenerate=degenerate,
                neighbor_rows=rows_mat[j],
            )
    if n_degenerate:
        logger.debug("%d samples have degenerate neighbor sets", n_degenerate)
    return sets


def combine_neighbor_values(
    neighbor_sets: list[NeighborSet],
    values: np.ndarray,
    fallback: np.ndarray,
    row_of_id: dict[int, int] | None = None,
) -> np.ndarray:
    """Per-sample weighted sums of neighbor rows of ``values``.

    Samples with no neighbors take their ``fallback`` row instead. Uses the
    sets' stored row positions when available; otherwise ``row_of_id`` must
    map neighbor ids to rows of ``values``.
    """
    values = np.asarray(values, dtype=float)
    out = np.array(fallback, dtype=float, copy=True)
    by_count: dict[int, list[int]] = {}
    for i, ns in enumerate(neighbor_sets):
        by_count.setdefault(len(ns.neighbor_ids), []).append(i)
    for count, members in by_count.items():
        if count == 0:
            continue
        rows_mat = np.empty((len(members), count), dtype=int)
        weights = np.empty((len(members), count))
        for j, i in enumerate(members):
            ns = neighbor_sets[i]
            if ns.neighbor_rows.size == count:
                rows_mat[j] = ns.neighbor_rows
            else:
                rows_mat[j] = [row_of_id[nid] for nid in ns.neighbor_ids]
            weights[j] = ns.weights
        out[members] = np.einsum("mc,mcd->md", weights, values[rows_mat])
    return out


def neighboring_labels(
    dataset, features: np.ndarray, config: NeighborConfig
) -> tuple[np.ndarray, list[NeighborSet]]:
    """Neighbor-reconstructed labels for a whole dataset.

    Returns the (N, 2) neighboring-label array along with the neighbor sets so
    callers can reuse the weights for other per-neighbor aggregations. Samples
    without any same-person neighbor keep their own training label.
    """
    sample_ids = dataset.ids()
    sets = build_neighbor_sets(features, dataset.person_ids(), sample_ids, config)
    row_of_id = {int(sid): i for i, sid in enumerate(sample_ids)}
    labels = dataset.labels()
    return combine_neighbor_values(sets, labels, labels, row_of_id), sets
