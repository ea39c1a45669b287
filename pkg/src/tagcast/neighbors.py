"""User similarity: k-means with gap-statistic selection, exact t-SNE with
run-averaged distances, neighbor retrieval and time-filtered tag harvesting."""
from __future__ import annotations

import datetime as dt
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .corpus import UserRecord
from .textprep import tag_key

DEFAULT_TAG_CAP = 15
DISTANCE_MAGIC = b"TGDIST\x00\x01"


class NeighborError(ValueError):
    pass


# ---------------------------------------------------------------- k-means

@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    labels: np.ndarray
    user_ids: tuple[str, ...] = ()
    inertia_trace: list[float] = field(default_factory=list)

    @property
    def inertia(self) -> float:
        return self.inertia_trace[-1] if self.inertia_trace else float("nan")

    def assignment(self) -> dict[str, int]:
        ids = self.user_ids or tuple(str(i) for i in range(len(self.labels)))
        return {u: int(c) for u, c in zip(ids, self.labels)}

    def members(self, cluster: int) -> list[str]:
        ids = self.user_ids or tuple(str(i) for i in range(len(self.labels)))
        return [u for u, c in zip(ids, self.labels) if c == cluster]

    def to_json(self) -> str:
        return json.dumps({"k": self.k, "assignment": self.assignment(),
                           "centroids": self.centroids.tolist(),
                           "inertia_trace": self.inertia_trace}, sort_keys=True)


def _plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    C = [X[int(rng.integers(0, n))]]
    d2 = ((X - C[0]) ** 2).sum(1)
    for _ in range(1, k):
        tot = d2.sum()
        j = int(rng.choice(n, p=d2 / tot)) if tot > 0 else int(rng.integers(0, n))
        C.append(X[j])
        d2 = np.minimum(d2, ((X - X[j]) ** 2).sum(1))
    return np.array(C, dtype=np.float64)


def kmeans(vectors, k: int, seed: int = 0, max_iters: int = 100,
           user_ids: Sequence[str] = ()) -> ClusterModel:
    """Lloyd iterations from k-means++ seeds; an empty cluster takes the point
    farthest from its current centroid."""
    X = np.asarray(vectors, dtype=np.float64)
    n = len(X)
    if not 1 <= k <= n:
        raise NeighborError(f"k={k} must lie in [1, n={n}]")
    rng = np.random.default_rng(seed)
    C = _plusplus(X, k, rng)
    labels, d = kernels.assign_labels(X, C)
    trace = [float(d.sum())]
    for _ in range(max_iters):
        newC = np.empty_like(C)
        counts = np.bincount(labels, minlength=k)
        for c in range(k):
            if counts[c]:
                newC[c] = X[labels == c].mean(0)
        taken = set()
        for c in np.flatnonzero(counts == 0):
            far = np.argsort(-d, kind="stable")
            j = next(int(i) for i in far if int(i) not in taken)
            taken.add(j)
            newC[c] = X[j]
        C = newC
        new_labels, d = kernels.assign_labels(X, C)
        trace.append(float(d.sum()))
        if np.array_equal(new_labels, labels) and not (counts == 0).any():
            labels = new_labels
            break
        labels = new_labels
    return ClusterModel(k, C, labels, tuple(user_ids), trace)


@dataclass
class GapStatResult:
    ks: list[int]
    gaps: list[float]
    sk: list[float]
    log_w: list[float]
    log_w_ref: list[float]
    chosen_k: int

    def to_dict(self) -> dict:
        return {"ks": self.ks, "gaps": self.gaps, "sk": self.sk, "log_w": self.log_w,
                "log_w_ref": self.log_w_ref, "chosen_k": self.chosen_k}


def gap_statistic(vectors, k_min: int = 2, k_max: int = 10, n_reference: int = 10,
                  seed: int = 0) -> GapStatResult:
    """Gap statistic with uniform bounding-box references and the one-SE rule."""
    X = np.asarray(vectors, dtype=np.float64)
    if k_min < 2:
        raise NeighborError("k_min must be >= 2")
    if k_max > len(X) or k_max <= k_min:
        raise NeighborError("need k_min < k_max <= n")
    lo, hi = X.min(0), X.max(0)
    if np.all(hi - lo == 0):
        raise NeighborError("degenerate data: all points identical")
    rng = np.random.default_rng(seed)
    refs = [rng.uniform(lo, hi, size=X.shape) for _ in range(n_reference)]
    ks, gaps, sks, lw, lwr = [], [], [], [], []
    for k in range(k_min, k_max + 1):
        wk = kmeans(X, k, seed=seed).inertia
        ref = np.array([math.log(max(kmeans(R, k, seed=seed + 1 + b).inertia, 1e-300))
                        for b, R in enumerate(refs)])
        log_wk = math.log(max(wk, 1e-300))
        ks.append(k)
        lw.append(log_wk)
        lwr.append(float(ref.mean()))
        gaps.append(float(ref.mean() - log_wk))
        sks.append(float(ref.std() * math.sqrt(1.0 + 1.0 / n_reference)))
    chosen = ks[-1]
    for i in range(len(ks) - 1):
        if gaps[i] >= gaps[i + 1] - sks[i + 1]:
            chosen = ks[i]
            break
    return GapStatResult(ks, gaps, sks, lw, lwr, chosen)


# ------------------------------------------------------------------ t-SNE

@dataclass
class ProjectionMap:
    coords: np.ndarray
    iterations: int
    perplexity: float
    seed: int
    kl_trace: list[float] = field(default_factory=list)
    user_ids: tuple[str, ...] = ()


def tsne(vectors, iters: int = 750, perplexity: float = 10.0, seed: int = 0,
         learning_rate: float = 100.0, exaggeration: float = 4.0, exaggeration_iters: int = 100,
         user_ids: Sequence[str] = (), kl_every: int = 10) -> ProjectionMap:
    """Exact t-SNE with momentum gradient descent and gains."""
    X = np.asarray(vectors, dtype=np.float64)
    n = len(X)
    if perplexity <= 0 or n < 3 * perplexity:
        raise NeighborError(f"perplexity {perplexity} infeasible for {n} points (need n >= 3*perp)")
    D = kernels.sq_distances(X)
    scale = np.median(D[D > 0]) if (D > 0).any() else 1.0
    Pc = kernels.conditional_affinities(D / scale, perplexity)
    P = (Pc + Pc.T) / (2.0 * n)
    P = np.maximum(P, 1e-12)
    np.fill_diagonal(P, 0.0)
    rng = np.random.default_rng(seed)
    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    vel = np.zeros_like(Y)
    gains = np.ones_like(Y)
    trace = []
    for it in range(iters):
        ex = exaggeration if it < exaggeration_iters else 1.0
        want_kl = it >= exaggeration_iters and (it - exaggeration_iters) % kl_every == 0
        grad, kl = kernels.tsne_gradient(P, Y, ex, want_kl)
        if want_kl:
            trace.append(kl)
        mom = 0.5 if it < 250 else 0.8
        same = np.sign(grad) == np.sign(vel)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        vel = mom * vel - learning_rate * gains * grad
        Y = Y + vel
        Y -= Y.mean(0)
    return ProjectionMap(Y, iters, perplexity, seed, trace, tuple(user_ids))


def pairwise_distances(Y) -> np.ndarray:
    return np.sqrt(kernels.sq_distances(np.asarray(Y, dtype=np.float64)))


def averaged_distances(vectors, runs: int = 4, base_seed: int = 0, jobs: int = 1,
                       **tsne_kw) -> np.ndarray:
    """Mean of 2-D distance matrices over independent t-SNE runs (seeds base_seed+i)."""
    if runs < 1:
        raise NeighborError("runs must be >= 1")
    seeds = [base_seed + i for i in range(runs)]

    def one(s):
        return pairwise_distances(tsne(vectors, seed=s, **tsne_kw).coords)

    if jobs > 1 and runs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            mats = list(ex.map(one, seeds))
    else:
        mats = [one(s) for s in seeds]
    D = np.mean(mats, axis=0)
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    return D


# ------------------------------------------------------------- neighbors

@dataclass(frozen=True)
class NeighborSet:
    query: str
    neighbors: tuple[tuple[str, float], ...]

    @property
    def h(self) -> int:
        return len(self.neighbors)

    @property
    def user_ids(self) -> list[str]:
        return [u for u, _ in self.neighbors]

    def to_dict(self) -> dict:
        return {"query": self.query, "neighbors": [[u, d] for u, d in self.neighbors]}


def nearest_neighbors(distances, user_ids: Sequence[str], query: str, h: int) -> NeighborSet:
    """h closest users to query (query excluded); ties broken by user_id."""
    if h < 1:
        raise NeighborError("h must be >= 1")
    ids = list(user_ids)
    try:
        q = ids.index(query)
    except ValueError:
        raise NeighborError(f"query {query!r} not in distance matrix") from None
    row = np.asarray(distances)[q]
    cand = sorted(((float(row[j]), ids[j]) for j in range(len(ids)) if j != q))
    return NeighborSet(query, tuple((u, d) for d, u in cand[:h]))


DROPPED = None


def sample_cluster_neighbors(model: ClusterModel, query: str, h: int,
                             seed: int = 0) -> NeighborSet | None:
    """h co-members drawn uniformly without replacement; None (dropped) if too few."""
    assign = model.assignment()
    if query not in assign:
        raise NeighborError(f"query {query!r} not assigned")
    mates = sorted(u for u in model.members(assign[query]) if u != query)
    if len(mates) < h:
        return DROPPED
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(mates), size=h, replace=False)
    return NeighborSet(query, tuple((mates[int(i)], 0.0) for i in pick))


def random_neighbors(user_ids: Sequence[str], query: str, h: int, seed: int = 0) -> NeighborSet:
    others = sorted(u for u in user_ids if u != query)
    h = min(h, len(others))
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(others), size=h, replace=False) if h else []
    return NeighborSet(query, tuple((others[int(i)], 0.0) for i in pick))


def harvest_neighbor_tags(users: Mapping[str, UserRecord], neighbors: NeighborSet | Sequence[str],
                          query_date: dt.date, cap: int = DEFAULT_TAG_CAP) -> list[str]:
    """Keywords of neighbor posts dated strictly before query_date.

    Most recent first (ties: user_id, then keyword order), deduplicated on the
    normalized form, at most ``cap`` tags.
    """
    ids = getattr(neighbors, "user_ids", neighbors)
    items = []
    for u in ids:
        rec = users[u]
        for p in rec.posts:
            if p.date < query_date:
                for i, kw in enumerate(p.keywords):
                    items.append((-p.date.toordinal(), u, i, kw))
    items.sort(key=lambda t: t[:3])
    out, seen = [], set()
    for *_, kw in items:
        key = tag_key(kw)
        if key not in seen:
            seen.add(key)
            out.append(kw)
            if len(out) >= cap:
                break
    return out


# -------------------------------------------------------------------- I/O

def save_distance_matrix(D: np.ndarray, user_ids: Sequence[str], path: str | Path) -> None:
    """Magic, u32 n, u32 header length, JSON id list, then n*n float64 LE."""
    D = np.asarray(D, dtype="<f8")
    n = len(user_ids)
    if D.shape != (n, n):
        raise NeighborError("distance matrix shape does not match user list")
    head = json.dumps(list(user_ids)).encode()
    with open(path, "wb") as fh:
        fh.write(DISTANCE_MAGIC)
        fh.write(struct.pack("<II", n, len(head)))
        fh.write(head)
        fh.write(np.ascontiguousarray(D).tobytes())


def load_distance_matrix(path: str | Path) -> tuple[np.ndarray, list[str]]:
    data = Path(path).read_bytes()
    if not data.startswith(DISTANCE_MAGIC):
        raise NeighborError(f"{path}: not a distance matrix file")
    off = len(DISTANCE_MAGIC)
    n, hl = struct.unpack_from("<II", data, off)
    off += 8
    ids = json.loads(data[off:off + hl])
    off += hl
    if len(data) - off != n * n * 8:
        raise NeighborError(f"{path}: size mismatch")
    D = np.frombuffer(data, dtype="<f8", offset=off).reshape(n, n).copy()
    return D, ids


def neighbor_sets_to_json(sets: Mapping[str, NeighborSet | None]) -> str:
    return json.dumps({q: (None if s is None else s.to_dict()["neighbors"])
                       for q, s in sorted(sets.items())}, sort_keys=True)
