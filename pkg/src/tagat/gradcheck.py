"""Toy-scale finite-difference suite used by ``tagat gradcheck``."""

import numpy as np

from . import autodiff as ad
from .graph import ScanTimeSeries, build_graph
from .losses import LossWeights, ce_loss, mse_loss, ortho_loss, total_loss
from .model import TAGAT, ModelConfig

TOY_TASKS = ("emotion", "gambling", "language")
DEFAULT_EPS = 1e-4


def toy_config(seed=0, **overrides):
    kw = dict(d_in=6, d_h=4, d_mem=4, d_proj=4, tasks=TOY_TASKS, mlp_hidden=(8, 6, 4),
              dtype="float64", seed=seed)
    kw.update(overrides)
    return ModelConfig(**kw)


def toy_graphs(seed=0, n_nodes=6, n_graphs=3, density=0.2):
    rng = np.random.default_rng([seed, 99])
    graphs = []
    for i in range(n_graphs):
        ts = ScanTimeSeries(
            f"toy-{i}", TOY_TASKS[i % len(TOY_TASKS)],
            rng.standard_normal((40, n_nodes)), int(i % 2), float(rng.uniform()),
        )
        graphs.append(build_graph(ts, density=density))
    return graphs


def model_loss_fn(model, graphs, tasks, weights=LossWeights(), train=True, dropout_key=(0, 0)):
    """Zero-argument closure computing the full objective; dropout masks are fixed by the key."""
    y = np.array([g.gender for g in graphs], dtype=np.float64)
    z = np.array([g.cog_score for g in graphs], dtype=np.float64)

    def f():
        probs, score = model.forward(graphs, tasks, train=train, dropout_key=dropout_key)
        ortho = ortho_loss(model.params["bank.H"])
        return total_loss(ce_loss(probs[:, 1], y), mse_loss(score, z), ortho, weights)

    return f


def run_suite(seed=0, eps=DEFAULT_EPS):
    """Max relative gradient error per check; every value should be <= 1e-5."""
    rng = np.random.default_rng([seed, 7])
    results = {}

    model = TAGAT(toy_config(seed))
    graphs = toy_graphs(seed)
    tasks = [g.task for g in graphs]
    results["full_model"] = ad.grad_check(model_loss_fn(model, graphs, tasks), model.parameters(), eps)

    logits = ad.Tensor(rng.standard_normal((5, 2)), requires_grad=True)
    labels = rng.integers(0, 2, 5)
    results["softmax_ce"] = ad.grad_check(
        lambda: ce_loss(ad.softmax_rows(logits)[:, 1], labels), [logits], eps)

    preds = ad.Tensor(rng.uniform(size=5), requires_grad=True)
    targets = rng.uniform(size=5)
    results["mse"] = ad.grad_check(lambda: mse_loss(preds, targets), [preds], eps)

    bank = ad.Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    results["ortho"] = ad.grad_check(lambda: ortho_loss(bank), [bank], eps)
    return results
