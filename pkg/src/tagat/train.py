"""SGD training, evaluation metrics and the leave-one-task-out protocol."""

import logging
import math
import zlib
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .errors import DegenerateCorr, EmptyDataset, NonFiniteLoss, ShapeMismatch
from .losses import LossWeights, ce_loss, mse_loss, ortho_loss, total_loss
from .model import TAG_SHUFFLE, TAGAT, ModelConfig, collate

log = logging.getLogger(__name__)

N_PARTITIONS = 5


@dataclass
class TrainConfig:
    lr0: float = 4e-6
    step_epochs: int = 10
    gamma: float = 0.4
    epochs: int = 100
    batch_size: int = 16
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    momentum: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.epochs < 0 or self.step_epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs >= 0, step_epochs >= 1 and batch_size >= 1 are required")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def lr_at(epoch, config: TrainConfig):
    """Step schedule: lr0 * gamma ** floor(epoch / step_epochs)."""
    return config.lr0 * config.gamma ** (epoch // config.step_epochs)


class SGD:
    """Plain SGD; momentum and weight decay are opt-in and default to off."""

    def __init__(self, params, momentum=0.0, weight_decay=0.0):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.value) for p in self.params] if momentum else None

    def step(self, grads, lr):
        if len(grads) != len(self.params):
            raise ShapeMismatch(f"{len(grads)} gradients for {len(self.params)} parameters")
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g.shape != p.shape:
                raise ShapeMismatch(f"gradient shape {g.shape} vs parameter shape {p.shape}")
            if self.weight_decay:
                g = g + self.weight_decay * p.value
            if self.velocity is not None:
                self.velocity[i] = self.momentum * self.velocity[i] + g
                g = self.velocity[i]
            p.value -= lr * g


def sgd_step(params, grads, lr):
    """theta <- theta - lr * g, in place."""
    SGD(params).step(grads, lr)
    return params


@dataclass
class TrainResult:
    model: TAGAT
    history: list
    rng_state: dict


def _batch_loss(model, graphs, tasks, weights, train, dropout_key):
    probs, score = model.forward(graphs, tasks, train=train, dropout_key=dropout_key)
    dt = model.config.np_dtype
    ce = ce_loss(probs[:, 1], np.array([g.gender for g in graphs], dtype=dt))
    mse = mse_loss(score, np.array([g.cog_score for g in graphs], dtype=dt))
    if model.config.task_aware and model.config.n_tasks >= 2:
        ortho = ortho_loss(model.params["bank.H"])
    else:
        ortho = ad.Tensor(np.zeros((), dtype=dt))
    return ce, mse, ortho, total_loss(ce, mse, ortho, weights)


def train(model: TAGAT, graphs, config: TrainConfig, on_batch: Optional[Callable] = None,
          rng_state: Optional[dict] = None) -> TrainResult:
    """Minimise ce + lambda1*mse + lambda2*ortho with step-scheduled SGD.

    ``on_batch(epoch, batch_index, graphs, tasks)`` is called with exactly
    what is about to be fed to the model; the protocol audit hooks in here.
    The orthogonality term is evaluated once per batch over the whole bank,
    so bank rows of tasks absent from the data still receive its gradient.
    """
    graphs = list(graphs)
    if not graphs:
        raise EmptyDataset("no training graphs")
    rng = np.random.default_rng([config.seed, TAG_SHUFFLE])
    if rng_state is not None:
        rng.bit_generator.state = rng_state
    params = model.parameters()
    opt = SGD(params, config.momentum, config.weight_decay)
    n = len(graphs)
    n_batches = math.ceil(n / config.batch_size)
    history = []
    step = 0
    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        order = rng.permutation(n)
        sums = np.zeros(4)
        for b in range(n_batches):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            batch = [graphs[i] for i in idx]
            tasks = [g.task for g in batch]
            if on_batch is not None:
                on_batch(epoch, b, batch, tasks)
            with ad.Tape():
                terms = _batch_loss(model, batch, tasks, config.weights, True, (epoch, b))
                values = [float(t.value) for t in terms]
                if not all(np.isfinite(values)):
                    raise NonFiniteLoss(step, dict(zip(("ce", "mse", "ortho", "total"), values)))
                grads = ad.backward(terms[-1], params)
            opt.step(grads, lr)
            sums += values
            step += 1
        means = sums / n_batches
        history.append({
            "epoch": epoch, "lr": lr,
            "ce": means[0], "mse": means[1], "ortho": means[2], "loss": means[3],
        })
        log.debug("epoch %d lr %.3g loss %.5f", epoch, lr, means[3])
    return TrainResult(model, history, rng.bit_generator.state)


def pearson_r(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc, yc = x - x.mean(), y - y.mean()
    den = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if len(x) < 2 or not den > 0:
        raise DegenerateCorr("correlation undefined: zero variance")
    return float((xc * yc).sum() / den)


@dataclass
class Metrics:
    accuracy: float  # percent
    pearson_corr: Optional[float]  # None when undefined
    n: int

    def to_dict(self):
        return asdict(self)


def evaluate(model: TAGAT, graphs, tasks=None) -> Metrics:
    """Gender accuracy (argmax) and Pearson correlation of predicted scores."""
    graphs = list(graphs)
    if not graphs:
        raise EmptyDataset("no evaluation graphs")
    probs, score = model.predict(graphs, tasks)
    labels = np.array([g.gender for g in graphs])
    acc = 100.0 * float(np.mean(np.argmax(probs, axis=1) == labels))
    try:
        corr = pearson_r(score, [g.cog_score for g in graphs])
    except DegenerateCorr:
        corr = None
    return Metrics(acc, corr, len(graphs))


def assign_partitions(subject_ids, k=N_PARTITIONS):
    """Deterministic subject -> partition (1..k) from a CRC32 hash of the id."""
    return {s: zlib.crc32(str(s).encode()) % k + 1 for s in sorted(set(subject_ids))}


def balanced_partitions(subject_ids, k=N_PARTITIONS):
    """Round-robin assignment over sorted ids: sizes differ by at most one."""
    return {s: i % k + 1 for i, s in enumerate(sorted(set(subject_ids)))}


@dataclass
class FoldSpec:
    held_out_task: str
    test_partition: int
    partitions: dict  # subject_id -> 1..5

    def split(self, graphs):
        """(train, known-task test, unseen-task test) graph lists."""
        train_set, known, unseen = [], [], []
        for g in graphs:
            part = self.partitions[g.subject_id]
            if part == self.test_partition:
                (unseen if g.task == self.held_out_task else known).append(g)
            elif g.task != self.held_out_task:
                train_set.append(g)
        return train_set, known, unseen


class ProtocolViolation(AssertionError):
    pass


@dataclass
class FoldReport:
    held_out_task: str
    test_partition: int
    known: dict  # task -> Metrics
    unseen: dict  # task -> Metrics
    audit: dict
    history: list = field(default_factory=list)

    def to_dict(self):
        return {
            "held_out_task": self.held_out_task,
            "test_partition": self.test_partition,
            "known": {t: m.to_dict() for t, m in self.known.items()},
            "unseen": {t: m.to_dict() for t, m in self.unseen.items()},
            "audit": self.audit,
            "history": self.history,
        }


def loto_fold(graphs, fold: FoldSpec, model_config: ModelConfig, train_config: TrainConfig,
              model: Optional[TAGAT] = None) -> FoldReport:
    """Train on the other partitions' non-held-out tasks, then test per task."""
    if fold.held_out_task not in model_config.tasks:
        raise ValueError(f"held-out task {fold.held_out_task!r} not in {model_config.tasks}")
    train_set, known, unseen = fold.split(graphs)
    test_subjects = {g.subject_id for g in known + unseen}
    seen_subjects, seen_tasks = set(), []

    def audit(epoch, b, batch, tasks):
        seen_subjects.update(g.subject_id for g in batch)
        seen_tasks.extend(tasks)

    model = TAGAT(model_config) if model is None else model
    result = train(model, train_set, train_config, on_batch=audit)
    heldout_exposure = sum(t == fold.held_out_task for t in seen_tasks)
    overlap = len(seen_subjects & test_subjects)
    if heldout_exposure or overlap:
        raise ProtocolViolation(
            f"held-out task seen {heldout_exposure} times; {overlap} test subjects trained on"
        )
    known_cells = {}
    for task in model_config.tasks:
        if task == fold.held_out_task:
            continue
        subset = [g for g in known if g.task == task]
        if subset:
            known_cells[task] = evaluate(model, subset)
    unseen_cells = {fold.held_out_task: evaluate(model, unseen)} if unseen else {}
    audit_info = {
        "n_train_scans": len(train_set),
        "n_train_subjects": len(seen_subjects),
        "n_test_subjects": len(test_subjects),
        "heldout_task_training_exposures": heldout_exposure,
        "train_test_subject_overlap": overlap,
        "tasks_seen_in_training": sorted(set(seen_tasks)),
    }
    return FoldReport(fold.held_out_task, fold.test_partition, known_cells, unseen_cells,
                      audit_info, result.history)


def _mean_std(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return {"mean": None, "std": None, "n": 0}
    arr = np.asarray(vals, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std(ddof=0)), "n": len(vals)}


def _cell_text(acc, corr):
    def fmt(s, digits):
        if s["mean"] is None:
            return "undefined"
        return f"{s['mean']:.{digits}f}({s['std']:.{digits}f})"

    return {"acc_text": fmt(acc, 1), "corr_text": fmt(corr, 3)}


def aggregate(folds, label="TA-GAT"):
    """mean(std) per (known|unseen, task) cell across folds; std uses divisor n."""
    out = {"label": label, "n_folds": len(folds), "known": {}, "unseen": {}}
    for kind in ("known", "unseen"):
        tasks = sorted({t for f in folds for t in getattr(f, kind)})
        for t in tasks:
            cells = [getattr(f, kind)[t] for f in folds if t in getattr(f, kind)]
            acc = _mean_std([c.accuracy for c in cells])
            corr = _mean_std([c.pearson_corr for c in cells])
            out[kind][t] = {"acc": acc, "corr": corr, **_cell_text(acc, corr)}
    return out


def run_label(model_config: ModelConfig, train_config: TrainConfig):
    if not model_config.task_aware:
        return "w/o TA"
    if train_config.weights.lambda2 == 0:
        return "w/o L_ortho"
    return "TA-GAT"


def cross_validate(graphs, held_out_task, model_config: ModelConfig, train_config: TrainConfig,
                   partitions=None, n_partitions=N_PARTITIONS, label=None):
    """Run one LOTO fold per test partition and aggregate the cells."""
    graphs = list(graphs)
    if partitions is None:
        partitions = assign_partitions([g.subject_id for g in graphs], n_partitions)
    folds = []
    for p in range(1, n_partitions + 1):
        spec = FoldSpec(held_out_task, p, partitions)
        log.info("fold: held-out %s, test partition %d", held_out_task, p)
        folds.append(loto_fold(graphs, spec, model_config, train_config))
    report = aggregate(folds, label or run_label(model_config, train_config))
    report["held_out_task"] = held_out_task
    report["folds"] = [f.to_dict() for f in folds]
    report["model_config"] = model_config.to_dict()
    report["train_config"] = train_config.to_dict()
    return report


def cross_validate_all(graphs, model_config, train_config, partitions=None,
                       n_partitions=N_PARTITIONS, label=None):
    """Iterate the held-out task over every task in the config."""
    runs = [
        cross_validate(graphs, t, model_config, train_config, partitions, n_partitions, label)
        for t in model_config.tasks
    ]
    return {"label": runs[0]["label"], "runs": runs}
