"""Functional brain graphs from ROI time series.

Node features are rows of the Pearson correlation matrix; edges are the
most positive partial correlations, estimated from a ridge-regularised
precision matrix.
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import core_math
from .errors import NonPositiveEdgeWeight, ShapeMismatch, UnknownTask

CANONICAL_TASKS = ("emotion", "gambling", "language", "motor", "relational", "social", "wm")


@dataclass(frozen=True)
class TaskId:
    index: int  # 1-based
    name: str


class TaskSet:
    """Ordered task vocabulary mapping names to 1-based indices."""

    def __init__(self, names):
        names = list(names)
        if len(set(names)) != len(names):
            raise ValueError(f"task names must be unique: {names}")
        self.names = tuple(names)
        self._index = {n: i + 1 for i, n in enumerate(names)}

    @classmethod
    def canonical(cls, m=7):
        return cls(CANONICAL_TASKS[:m])

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return (TaskId(i + 1, n) for i, n in enumerate(self.names))

    def __contains__(self, name):
        return name in self._index

    def get(self, key) -> TaskId:
        if isinstance(key, TaskId):
            key = key.name
        if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
            if 1 <= key <= len(self.names):
                return TaskId(int(key), self.names[key - 1])
            raise UnknownTask(key)
        if key in self._index:
            return TaskId(self._index[key], key)
        raise UnknownTask(key)

    def to_dict(self):
        return {n: i for n, i in self._index.items()}


@dataclass
class ScanTimeSeries:
    subject_id: str
    task: str
    data: np.ndarray  # T x N
    gender: int
    cog_score: float

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ShapeMismatch(f"scan data must be T x N, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError(f"scan {self.subject_id}/{self.task} has non-finite entries")
        if self.gender not in (0, 1):
            raise ValueError(f"gender label must be 0 or 1, got {self.gender!r}")
        if not 0.0 <= self.cog_score <= 1.0:
            raise ValueError(f"cog_score must lie in [0, 1], got {self.cog_score!r}")

    @property
    def T(self):
        return self.data.shape[0]

    @property
    def N(self):
        return self.data.shape[1]


@dataclass
class BrainGraph:
    node_features: np.ndarray  # N x d_in
    edges: np.ndarray  # E x 2, i < j
    weights: np.ndarray  # E
    subject_id: str = ""
    task: str = ""
    gender: int = 0
    cog_score: float = 0.0
    provenance: dict = field(default_factory=dict)

    @property
    def n_nodes(self):
        return self.node_features.shape[0]

    @property
    def n_edges(self):
        return self.edges.shape[0]

    def arcs(self):
        """Directed arcs (src, dst, weight): every undirected edge in both directions."""
        i, j = self.edges[:, 0], self.edges[:, 1]
        src = np.concatenate([i, j])
        dst = np.concatenate([j, i])
        return src, dst, np.concatenate([self.weights, self.weights])


def edge_count(n_nodes, density):
    """ceil(density * N(N-1)/2), computed in exact rational arithmetic."""
    pairs = n_nodes * (n_nodes - 1) // 2
    return math.ceil(Fraction(repr(float(density))) * pairs)


def build_node_features(ts, drop_diagonal=False):
    data = ts.data if isinstance(ts, ScanTimeSeries) else np.asarray(ts)
    feats = core_math.pearson_corr_matrix(data)
    if drop_diagonal:
        np.fill_diagonal(feats, 0.0)
    return feats


def partial_correlations(data, ridge=None):
    cov = core_math.covariance(data)
    if ridge is None:
        ridge = core_math.default_ridge(cov)
    return core_math.partial_corr(core_math.precision_ridge(cov, ridge)), ridge


def select_edges(pcorr, density=0.05):
    """Top partial correlations by signed value, ties broken by (i, j) order."""
    if not 0 < density < 1:
        raise ValueError(f"density must be in (0, 1), got {density}")
    n = pcorr.shape[0]
    iu, ju = np.triu_indices(n, 1)
    vals = pcorr[iu, ju]
    keep = edge_count(n, density)
    # triu order is already lexicographic, so a stable sort breaks ties by (i, j)
    order = np.argsort(-vals, kind="stable")[:keep]
    edges = np.stack([iu[order], ju[order]], axis=1).astype(np.int64)
    weights = vals[order]
    for (i, j), w in zip(edges, weights):
        if not w > 0:
            raise NonPositiveEdgeWeight(int(i), int(j), float(w))
    return edges, weights


def build_edges(ts, density=0.05, ridge=None):
    data = ts.data if isinstance(ts, ScanTimeSeries) else np.asarray(ts)
    pcorr, _ = partial_correlations(data, ridge)
    return select_edges(pcorr, density)


def build_graph(ts: ScanTimeSeries, density=0.05, ridge=None, drop_diagonal=False) -> BrainGraph:
    feats = build_node_features(ts, drop_diagonal=drop_diagonal)
    pcorr, used_ridge = partial_correlations(ts.data, ridge)
    edges, weights = select_edges(pcorr, density)
    return BrainGraph(
        node_features=feats,
        edges=edges,
        weights=weights,
        subject_id=ts.subject_id,
        task=ts.task,
        gender=ts.gender,
        cog_score=ts.cog_score,
        provenance={
            "density": float(density),
            "ridge": float(used_ridge),
            "ridge_mode": "relative" if ridge is None else "absolute",
            "drop_diagonal": bool(drop_diagonal),
        },
    )


def build_graphs(scans, density=0.05, ridge=None, drop_diagonal=False):
    return [build_graph(s, density, ridge, drop_diagonal) for s in scans]
