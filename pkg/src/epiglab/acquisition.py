"""Pool scoring and selection.

Information-theoretic scorers work on probability cubes of shape
(members, inputs, classes) and report nats. The expected-information-gain
scorers are exact over the member set:

  bald(x)  = H[mean_k p_k(y|x)] - mean_k H[p_k(y|x)]
  epig(x)  = mean over targets x* of I(y; y*), with the joint
             p(y, y*) = mean_k p_k(y|x) p_k(y*|x*)

Zero probabilities follow the 0*log(0)=0 convention, with probabilities
clamped at 1e-12 inside every log. Coverage baselines (greedy k-centres,
k-means, TypiClust, ProbCover) operate on raw embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import ConfigError, DataError, ScoringError, ShapeError, TuningError
from .heads import check_prob_cube

LOG_CLAMP = 1e-12


# ---------------------------------------------------------------------------
# entropies and information scorers
# ---------------------------------------------------------------------------


def _xlogx(p: np.ndarray) -> np.ndarray:
    return p * np.log(np.maximum(p, LOG_CLAMP))


def _entropy_rows(p: np.ndarray) -> np.ndarray:
    """Shannon entropy along the last axis, in nats."""
    return -_xlogx(p).sum(axis=-1)


def entropy(p: np.ndarray) -> float:
    """Shannon entropy of one probability vector, in nats."""
    p = np.asarray(p, dtype=np.float64)
    if p.min() < -1e-12:
        raise DataError(f"negative probability {p.min()} in entropy input")
    return float(_entropy_rows(np.clip(p, 0.0, None)))


def max_entropy_scores(cube: np.ndarray) -> np.ndarray:
    """Entropy of the marginal predictive, per pool input."""
    cube = check_prob_cube(cube)
    return _entropy_rows(cube.mean(axis=0))


def bald_scores(cube: np.ndarray) -> np.ndarray:
    """Mutual information between the label and the member identity, per input."""
    cube = check_prob_cube(cube)
    total = _entropy_rows(cube.mean(axis=0))
    member_mean = _entropy_rows(cube).mean(axis=0)
    return total - member_mean


@numba.njit(parallel=True, cache=True)
def _joint_xlogx_rows(joint: np.ndarray, classes: int, out: np.ndarray) -> None:
    """Accumulate sum of p*log(max(p, 1e-12)) over each input's joint block.

    joint has shape (b*classes, targets*classes); out has shape (b,).
    """
    b = joint.shape[0] // classes
    width = joint.shape[1]
    for i in numba.prange(b):
        acc = 0.0
        for r in range(i * classes, (i + 1) * classes):
            for q in range(width):
                v = joint[r, q]
                if v > 0.0:
                    w = v if v > 1e-12 else 1e-12
                    acc += v * np.log(w)
        out[i] = acc


def epig_scores(pool_cube: np.ndarray, target_cube: np.ndarray) -> np.ndarray:
    """Expected information gain about a random target's label, per pool input.

    Exact over the shared member set and the given targets: for pool input i
    the score is the mean over targets j of the mutual information of the
    member-averaged joint distribution over (y, y*).
    """
    pool_cube = check_prob_cube(pool_cube)
    target_cube = check_prob_cube(target_cube)
    k, n, c = pool_cube.shape
    kt, m, ct = target_cube.shape
    if kt != k:
        raise ShapeError(f"member counts differ: pool {k} vs target {kt}")
    if ct != c:
        raise ShapeError(f"class counts differ: pool {c} vs target {ct}")
    if m == 0:
        raise ShapeError("target cube holds no inputs")

    pool_marg = pool_cube.mean(axis=0)
    target_marg = target_cube.mean(axis=0)
    h_pool = _entropy_rows(pool_marg)
    h_target_mean = _entropy_rows(target_marg).mean()

    # I(y; y*) = H[p(y)] + H[p(y*)] - H[joint]; only the joint entropy needs
    # the full (input, target) cross product, computed blockwise as a matmul
    a = np.ascontiguousarray(pool_cube.transpose(1, 2, 0).reshape(n * c, k))
    b = np.ascontiguousarray(target_cube.reshape(k, m * c))
    joint_xlogx = np.empty(n)
    chunk = max(1, 5_000_000 // max(1, m * c * c))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        joint = a[lo * c:hi * c] @ b
        joint /= k
        _joint_xlogx_rows(joint, c, joint_xlogx[lo:hi])

    return h_pool + h_target_mean + joint_xlogx / m


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------


def _as_index_array(indices) -> np.ndarray:
    return np.asarray(indices, dtype=np.int64).ravel()


def random_select(pool, batch: int, seed: int) -> np.ndarray:
    """Uniform draw without replacement from the pool."""
    pool = _as_index_array(pool)
    if batch > pool.size:
        raise ConfigError(f"batch {batch} exceeds pool size {pool.size}")
    rng = np.random.default_rng(seed)
    return pool[rng.choice(pool.size, size=batch, replace=False)]


def select_top(scores: np.ndarray, pool, batch: int, seed: int) -> np.ndarray:
    """Highest-scoring pool indices; ties broken uniformly at random."""
    scores = np.asarray(scores, dtype=np.float64)
    pool = _as_index_array(pool)
    if scores.shape[0] != pool.size:
        raise ShapeError(f"{scores.shape[0]} scores for a pool of {pool.size}")
    bad = np.flatnonzero(~np.isfinite(scores))
    if bad.size:
        raise ScoringError(
            f"non-finite score {scores[bad[0]]} for pool index {int(pool[bad[0]])}"
        )
    if batch > pool.size:
        raise ConfigError(f"batch {batch} exceeds pool size {pool.size}")
    rng = np.random.default_rng(seed)
    jitter = rng.random(pool.size)
    order = np.lexsort((jitter, -scores))
    return pool[order[:batch]]


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sq = (a**2).sum(axis=1)[:, None] + (b**2).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(sq, 0.0)


def kcentre_select(embeddings: np.ndarray, labelled, pool, batch: int) -> np.ndarray:
    """Greedy farthest-point picks against the labelled set.

    With no labelled anchors, the first pick is the pool point farthest from
    the origin; subsequent picks maximize the minimum distance to everything
    picked or labelled so far.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labelled = _as_index_array(labelled)
    pool = _as_index_array(pool)
    if pool.size == 0:
        raise ConfigError("empty pool")
    if batch > pool.size:
        raise ConfigError(f"batch {batch} exceeds pool size {pool.size}")

    pool_pts = embeddings[pool]
    if labelled.size:
        min_sq = _pairwise_sq_dists(pool_pts, embeddings[labelled]).min(axis=1)
        picked = []
        start = 0
    else:
        first = int(np.argmax((pool_pts**2).sum(axis=1)))
        picked = [first]
        min_sq = _pairwise_sq_dists(pool_pts, pool_pts[first:first + 1])[:, 0]
        start = 1

    for _ in range(start, batch):
        nxt = int(np.argmax(min_sq))
        picked.append(nxt)
        d = _pairwise_sq_dists(pool_pts, pool_pts[nxt:nxt + 1])[:, 0]
        min_sq = np.minimum(min_sq, d)
    return pool[np.asarray(picked, dtype=np.int64)]


def seeded_kmeans(points: np.ndarray, k: int, seed: int,
                  max_iter: int = 100, tol: float = 1e-6):
    """Lloyd's algorithm with k-means++ style seeding.

    Returns (centroids, assignment). Stops after max_iter sweeps or when the
    largest centroid shift drops below tol. Deterministic given the seed.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    k = min(k, n)
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    closest = _pairwise_sq_dists(points, centroids[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            centroids[j] = points[rng.integers(n)]
        else:
            centroids[j] = points[rng.choice(n, p=closest / total)]
        closest = np.minimum(
            closest, _pairwise_sq_dists(points, centroids[j:j + 1])[:, 0]
        )

    assignment = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        assignment = np.argmin(_pairwise_sq_dists(points, centroids), axis=1)
        shift = 0.0
        for j in range(k):
            members = points[assignment == j]
            if members.shape[0] == 0:
                continue  # empty cluster keeps its previous centroid
            new = members.mean(axis=0)
            shift = max(shift, float(np.sqrt(((new - centroids[j]) ** 2).sum())))
            centroids[j] = new
        if shift < tol:
            break
    assignment = np.argmin(_pairwise_sq_dists(points, centroids), axis=1)
    return centroids, assignment


def kmeans_select(embeddings: np.ndarray, pool, batch: int, seed: int) -> np.ndarray:
    """Cluster the pool into batch groups and return each centroid's nearest point."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    pool = _as_index_array(pool)
    if batch > pool.size:
        raise ConfigError(f"batch {batch} exceeds pool size {pool.size}")
    if batch == 0:
        return np.empty(0, dtype=np.int64)
    pts = embeddings[pool]
    centroids, _ = seeded_kmeans(pts, batch, seed)
    taken: list[int] = []
    for j in range(centroids.shape[0]):
        order = np.argsort(_pairwise_sq_dists(pts, centroids[j:j + 1])[:, 0],
                           kind="stable")
        for cand in order:
            if int(cand) not in taken:
                taken.append(int(cand))
                break
    return pool[np.asarray(taken, dtype=np.int64)]


def _typicality(members: np.ndarray, neighbours: int = 20) -> np.ndarray:
    """Inverse mean distance to each point's nearest in-cluster neighbours."""
    m = members.shape[0]
    if m == 1:
        return np.array([np.inf])
    d = np.sqrt(_pairwise_sq_dists(members, members))
    d_sorted = np.sort(d, axis=1)[:, 1:]  # drop self
    use = min(neighbours, m - 1)
    mean_dist = d_sorted[:, :use].mean(axis=1)
    return 1.0 / np.maximum(mean_dist, 1e-12)


def typiclust_select(embeddings: np.ndarray, labelled, pool, batch: int,
                     seed: int) -> np.ndarray:
    """Pick the most typical point from each of the largest uncovered clusters.

    Clusters the labelled and pool points into |labelled| + batch k-means
    clusters; clusters already containing a labelled point are skipped.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labelled = _as_index_array(labelled)
    pool = _as_index_array(pool)
    if batch > pool.size:
        raise ConfigError(f"batch {batch} exceeds pool size {pool.size}")

    union = np.concatenate([labelled, pool])
    is_labelled = np.zeros(union.size, dtype=bool)
    is_labelled[:labelled.size] = True
    pts = embeddings[union]
    k = min(labelled.size + batch, union.size)
    _, assignment = seeded_kmeans(pts, k, seed)

    sizes = np.bincount(assignment, minlength=k)
    covered = np.zeros(k, dtype=bool)
    for cl in assignment[is_labelled]:
        covered[cl] = True
    order = np.argsort(-sizes, kind="stable")

    picked: list[int] = []
    picked_set: set[int] = set()
    for uncovered_only in (True, False):
        for cl in order:
            if len(picked) == batch:
                break
            if sizes[cl] == 0 or covered[cl] != (not uncovered_only):
                continue
            member_pos = np.flatnonzero((assignment == cl) & ~is_labelled)
            member_pos = np.array(
                [p for p in member_pos if int(union[p]) not in picked_set],
                dtype=np.int64,
            )
            if member_pos.size == 0:
                continue
            typ = _typicality(pts[member_pos])
            best = int(union[member_pos[int(np.argmax(typ))]])
            picked.append(best)
            picked_set.add(best)
        if len(picked) == batch:
            break
    return np.asarray(picked, dtype=np.int64)


# ---------------------------------------------------------------------------
# ProbCover
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbCoverConfig:
    radius: float = 0.0
    purity_target: float = 0.95
    radius_grid: tuple[float, ...] = ()
    kmeans_seed: int = 0

    def __post_init__(self):
        if self.radius < 0:
            raise ConfigError("radius must be >= 0")
        if not 0.0 < self.purity_target <= 1.0:
            raise ConfigError("purity_target must lie in (0, 1]")
        grid = self.radius_grid
        if any(g < 0 for g in grid):
            raise ConfigError("radius grid must be non-negative")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("radius grid must be strictly increasing")


def probcover_purity_curve(embeddings: np.ndarray, num_classes: int,
                           config: ProbCoverConfig) -> list[tuple[float, float]]:
    """Purity of the closed delta-ball pseudo-labelling at every grid radius."""
    if not config.radius_grid:
        raise ConfigError("radius grid is empty")
    embeddings = np.asarray(embeddings, dtype=np.float64)
    _, pseudo = seeded_kmeans(embeddings, num_classes, config.kmeans_seed)
    dist = np.sqrt(_pairwise_sq_dists(embeddings, embeddings))
    same = pseudo[:, None] == pseudo[None, :]
    curve = []
    for delta in config.radius_grid:
        in_ball = dist <= delta
        pure = np.logical_or(~in_ball, same).all(axis=1)
        curve.append((float(delta), float(pure.mean())))
    return curve


def probcover_tune_radius(embeddings: np.ndarray, num_classes: int,
                          config: ProbCoverConfig) -> float:
    """Largest grid radius whose pseudo-label purity meets the target."""
    curve = probcover_purity_curve(embeddings, num_classes, config)
    admissible = [d for d, p in curve if p >= config.purity_target]
    if not admissible:
        best = max(p for _, p in curve)
        raise TuningError(
            f"no grid radius reaches purity {config.purity_target}"
            f" (best {best:.4f})"
        )
    return admissible[-1]


def probcover_select(embeddings: np.ndarray, labelled, pool, batch: int,
                     delta: float) -> np.ndarray:
    """Greedy max-out-degree picks on the directed delta-cover graph.

    A point covers every point within delta of it (including itself). Points
    already covered by the labelled set contribute no degree; ties go to the
    lowest dataset index.
    """
    if delta <= 0:
        raise ConfigError("delta must be > 0")
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labelled = _as_index_array(labelled)
    pool = _as_index_array(pool)
    if batch > pool.size:
        raise ConfigError(f"batch {batch} exceeds pool size {pool.size}")

    n = embeddings.shape[0]
    dist = np.sqrt(_pairwise_sq_dists(embeddings, embeddings))
    adjacency = dist <= delta  # adjacency[u, v]: u covers v

    covered = np.zeros(n, dtype=bool)
    if labelled.size:
        covered = adjacency[labelled].any(axis=0)

    order = np.argsort(pool, kind="stable")
    pool_sorted = pool[order]
    available = np.ones(pool_sorted.size, dtype=bool)
    picks = []
    for _ in range(batch):
        degrees = adjacency[pool_sorted][:, ~covered].sum(axis=1)
        degrees[~available] = -1
        best_pos = int(np.argmax(degrees))  # argmax keeps the lowest index on ties
        picks.append(int(pool_sorted[best_pos]))
        available[best_pos] = False
        covered |= adjacency[pool_sorted[best_pos]]
    return np.asarray(picks, dtype=np.int64)
