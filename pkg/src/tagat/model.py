"""Task-aware graph attention network.

Two GAT layers encode a brain graph; mean and max pooling of both layers give
the graph embedding. A learnable task memory bank supplies one context row per
task, passed through a single linear projection and appended to the embedding.
Two 4-layer SiLU MLP heads predict the gender class probabilities (softmax)
and the normalised cognitive score (sigmoid).
"""

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import IndexOutOfRange, ShapeMismatch, UnknownTask
from .graph import CANONICAL_TASKS, BrainGraph, TaskId

# stream tags keep the seeded generators of different purposes apart
TAG_INIT = 0
TAG_SHUFFLE = 1
TAG_DROPOUT = 2


def default_mlp_hidden(d_in):
    return (max(4, d_in // 10), max(4, d_in // 80), max(4, d_in // 640))


@dataclass
class ModelConfig:
    d_in: int
    d_h: int = 2048
    d_mem: int = 2048
    d_proj: int = 2048
    tasks: tuple = CANONICAL_TASKS
    heads: int = 1
    mlp_hidden: Optional[tuple] = None
    dropout: float = 0.2
    negative_slope: float = 0.2
    task_aware: bool = True
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        self.tasks = tuple(self.tasks)
        if self.mlp_hidden is None:
            self.mlp_hidden = default_mlp_hidden(self.head_input_dim)
        self.mlp_hidden = tuple(int(w) for w in self.mlp_hidden)
        if len(self.mlp_hidden) != 3:
            raise ValueError(f"MLP heads have 4 layers, so 3 hidden widths; got {self.mlp_hidden}")
        for name in ("d_in", "d_h", "d_mem", "d_proj", "heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.task_aware and len(self.tasks) < 1:
            raise ValueError("a task-aware model needs at least one task")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def n_tasks(self):
        return len(self.tasks)

    @property
    def embedding_dim(self):
        return 4 * self.d_h * self.heads

    @property
    def head_input_dim(self):
        return self.embedding_dim + (self.d_proj if self.task_aware else 0)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self):
        d = asdict(self)
        d["tasks"] = list(self.tasks)
        d["mlp_hidden"] = list(self.mlp_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class GraphBatch:
    """Disjoint union of graphs, self-loops included."""

    x: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    w: np.ndarray
    graph_ids: np.ndarray
    n_graphs: int

    @property
    def n_nodes(self):
        return self.x.shape[0]


def collate(graphs: Sequence[BrainGraph], dtype=np.float64) -> GraphBatch:
    xs, srcs, dsts, ws, gids = [], [], [], [], []
    offset = 0
    d_in = None
    for g_idx, g in enumerate(graphs):
        n = g.n_nodes
        if n < 1:
            raise ShapeMismatch("graph has no nodes")
        if d_in is None:
            d_in = g.node_features.shape[1]
        elif g.node_features.shape[1] != d_in:
            raise ShapeMismatch(
                f"node feature widths differ: {d_in} vs {g.node_features.shape[1]}"
            )
        if g.n_edges and (g.edges.min() < 0 or g.edges.max() >= n):
            raise IndexOutOfRange(f"graph {g_idx} has an edge outside 0..{n - 1}")
        src, dst, w = g.arcs()
        loops = np.arange(n)
        xs.append(g.node_features)
        srcs.append(np.concatenate([src, loops]) + offset)
        dsts.append(np.concatenate([dst, loops]) + offset)
        ws.append(np.concatenate([w, np.ones(n)]))
        gids.append(np.full(n, g_idx))
        offset += n
    if not xs:
        raise ShapeMismatch("cannot collate an empty list of graphs")
    return GraphBatch(
        x=np.concatenate(xs).astype(dtype),
        src=np.concatenate(srcs).astype(np.int64),
        dst=np.concatenate(dsts).astype(np.int64),
        w=np.concatenate(ws).astype(dtype),
        graph_ids=np.concatenate(gids).astype(np.int64),
        n_graphs=len(graphs),
    )


def segment_softmax(scores: Tensor, seg, n):
    """Softmax of ``scores`` within each segment (here: incoming arcs per node)."""
    mx = np.full(n, -np.inf, dtype=scores.dtype)
    np.maximum.at(mx, seg, scores.value)
    e = ad.exp(scores - Tensor(mx[seg]))
    denom = ad.segment_sum(e, seg, n)
    return e / ad.row_gather(denom, seg)


def gat_layer_forward(x, src, dst, w, W, a, b_e, negative_slope=0.2):
    """One GAT layer over directed arcs ``src -> dst``.

    ``W`` is heads x d_in x d_h, ``a`` heads x 2*d_h, ``b_e`` length heads.
    Self-loops must already be present in the arc list; ``collate`` adds them.
    """
    x = ad.as_tensor(x)
    n = x.shape[0]
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if src.size and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n):
        raise IndexOutOfRange(f"arc endpoint outside 0..{n - 1}")
    w = Tensor(np.asarray(w, dtype=x.dtype))
    heads, _, d_h = W.shape
    outs = []
    for h in range(heads):
        z = x @ W[h]
        a_h = a[h]
        s_dst = z @ a_h[:d_h]
        s_src = z @ a_h[d_h:]
        e = ad.row_gather(s_dst, dst) + ad.row_gather(s_src, src) + b_e[h] * w
        alpha = segment_softmax(ad.leaky_relu(e, negative_slope), dst, n)
        msg = ad.row_gather(z, src) * alpha.reshape(-1, 1)
        outs.append(ad.segment_sum(msg, dst, n))
    return outs[0] if heads == 1 else ad.concat(outs, axis=1)


def _glorot(rng, shape, fan_in, fan_out, dtype):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape).astype(dtype)


def _fan_in_uniform(rng, shape, fan_in, dtype):
    lim = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-lim, lim, size=shape).astype(dtype)


def init_params(config: ModelConfig) -> dict:
    rng = np.random.default_rng([config.seed, TAG_INIT])
    dt = config.np_dtype
    c = config
    p = {}
    d_prev = c.d_in
    for layer in ("gat1", "gat2"):
        p[f"{layer}.W"] = _glorot(rng, (c.heads, d_prev, c.d_h), d_prev, c.d_h, dt)
        p[f"{layer}.a"] = _glorot(rng, (c.heads, 2 * c.d_h), 2 * c.d_h, 1, dt)
        # b_e = 0 makes both ends of an isolated edge tie under max pooling
        p[f"{layer}.b_e"] = np.ones(c.heads, dtype=dt)
        d_prev = c.d_h * c.heads
    if c.task_aware:
        p["bank.H"] = (rng.standard_normal((c.n_tasks, c.d_mem)) / np.sqrt(c.d_mem)).astype(dt)
        p["bank.proj_W"] = _fan_in_uniform(rng, (c.d_mem, c.d_proj), c.d_mem, dt)
        p["bank.proj_b"] = np.zeros(c.d_proj, dtype=dt)
    for head, d_out in (("cls", 2), ("reg", 1)):
        widths = (c.head_input_dim, *c.mlp_hidden, d_out)
        for i in range(4):
            p[f"{head}.{i}.W"] = _fan_in_uniform(rng, (widths[i], widths[i + 1]), widths[i], dt)
            p[f"{head}.{i}.b"] = np.zeros(widths[i + 1], dtype=dt)
    return {k: Tensor(v, requires_grad=True) for k, v in p.items()}


class TAGAT:
    """Parameters plus forward pass of the task-aware GAT."""

    def __init__(self, config: ModelConfig, params: Optional[dict] = None):
        self.config = config
        self.params = init_params(config) if params is None else params
        self._check_shapes()

    def _check_shapes(self):
        expected = param_shapes(self.config)
        got = {k: v.shape for k, v in self.params.items()}
        if expected != got:
            diff = sorted(set(expected.items()) ^ set(got.items()))
            raise ShapeMismatch(f"parameter shapes do not match the config: {diff}")

    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def state_dict(self):
        return {k: v.value.copy() for k, v in self.params.items()}

    def load_state_dict(self, state):
        for k, v in state.items():
            self.params[k].value[...] = v

    def task_index(self, task) -> int:
        """0-based bank row for a task name, 1-based index or TaskId."""
        if isinstance(task, TaskId):
            task = task.name
        if isinstance(task, str):
            if task not in self.config.tasks:
                raise UnknownTask(task)
            return self.config.tasks.index(task)
        k = int(task)
        if not 1 <= k <= self.config.n_tasks:
            raise UnknownTask(task)
        return k - 1

    def encode(self, batch: GraphBatch) -> Tensor:
        p, c = self.params, self.config
        x = Tensor(batch.x.astype(c.np_dtype, copy=False))
        w = batch.w.astype(c.np_dtype, copy=False)
        pooled = []
        for layer in ("gat1", "gat2"):
            x = gat_layer_forward(
                x, batch.src, batch.dst, w,
                p[f"{layer}.W"], p[f"{layer}.a"], p[f"{layer}.b_e"], c.negative_slope,
            )
            pooled.append(ad.segment_mean(x, batch.graph_ids, batch.n_graphs))
            pooled.append(ad.segment_max(x, batch.graph_ids, batch.n_graphs))
        return ad.concat(pooled, axis=1)

    def bank_lookup(self, tasks) -> Tensor:
        rows = np.array([self.task_index(t) for t in tasks], dtype=np.int64)
        h = ad.row_gather(self.params["bank.H"], rows)
        return h @ self.params["bank.proj_W"] + self.params["bank.proj_b"]

    def _mlp(self, head, x, train, dropout_key):
        p, c = self.params, self.config
        layer_base = 0 if head == "cls" else 3
        for i in range(4):
            x = x @ p[f"{head}.{i}.W"] + p[f"{head}.{i}.b"]
            if i < 3:
                x = ad.silu(x)
                rng = None
                if train and c.dropout > 0:
                    rng = np.random.default_rng(
                        [c.seed, TAG_DROPOUT, *dropout_key, layer_base + i]
                    )
                x = ad.dropout(x, c.dropout, train, rng)
        return x

    def forward(self, graphs, tasks, train=False, dropout_key=(0, 0)):
        """Class probabilities (B x 2) and scores (B,) for a list of graphs.

        ``dropout_key`` is (epoch, batch index); together with the model seed
        and the layer id it seeds each dropout mask.
        """
        if isinstance(graphs, GraphBatch):
            batch = graphs
        else:
            batch = collate(graphs, self.config.np_dtype)
        if len(tasks) != batch.n_graphs:
            raise ShapeMismatch(f"{len(tasks)} task ids for {batch.n_graphs} graphs")
        feats = self.encode(batch)
        if self.config.task_aware:
            feats = ad.concat([feats, self.bank_lookup(tasks)], axis=1)
        probs = ad.softmax_rows(self._mlp("cls", feats, train, dropout_key))
        score = ad.sigmoid(self._mlp("reg", feats, train, dropout_key)).reshape(-1)
        return probs, score

    def predict(self, graphs, tasks=None):
        """Eval-mode numpy outputs; ``tasks`` defaults to each graph's own task."""
        if tasks is None:
            tasks = [g.task for g in graphs]
        with ad.no_grad():
            probs, score = self.forward(graphs, tasks, train=False)
        return probs.value, score.value


def param_shapes(config):
    c = config
    shapes = {}
    d_prev = c.d_in
    for layer in ("gat1", "gat2"):
        shapes[f"{layer}.W"] = (c.heads, d_prev, c.d_h)
        shapes[f"{layer}.a"] = (c.heads, 2 * c.d_h)
        shapes[f"{layer}.b_e"] = (c.heads,)
        d_prev = c.d_h * c.heads
    if c.task_aware:
        shapes["bank.H"] = (c.n_tasks, c.d_mem)
        shapes["bank.proj_W"] = (c.d_mem, c.d_proj)
        shapes["bank.proj_b"] = (c.d_proj,)
    for head, d_out in (("cls", 2), ("reg", 1)):
        widths = (c.head_input_dim, *c.mlp_hidden, d_out)
        for i in range(4):
            shapes[f"{head}.{i}.W"] = (widths[i], widths[i + 1])
            shapes[f"{head}.{i}.b"] = (widths[i + 1],)
    return shapes


def model_forward(graph: BrainGraph, task, model: TAGAT, train=False, dropout_key=(0, 0)):
    """Single-graph forward: (class probabilities of length 2, scalar score)."""
    probs, score = model.forward([graph], [task], train=train, dropout_key=dropout_key)
    return probs[0], score[0]
