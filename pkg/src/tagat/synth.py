"""Synthetic multi-task populations with planted gender, score and task signal.

Every scan is a sum of rank-one spatio-temporal components, so the planted
effects show up in the correlation structure the graphs are built from:

    X = F @ L.T                                  shared connectivity
      + gender_effect * u (x) g[y]               one map per gender
      + cog_effect * z * v (x) c                 amplitude grows with the score
      + task_effect * w (x) t[k]                 one map per task
      + noise_std * E

F, u, v, w and E are drawn fresh per scan; the spatial maps are fixed per seed.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .graph import CANONICAL_TASKS, ScanTimeSeries

TAG_PATTERNS = 10
TAG_LABELS = 11
TAG_SCAN = 12
N_SHARED = 3


@dataclass
class SynthConfig:
    n_subjects: int = 60
    n_tasks: int = 3
    n_rois: int = 20
    T: int = 120
    gender_effect: float = 1.0
    cog_effect: float = 1.0
    task_effect: float = 1.0
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_subjects", "n_tasks", "n_rois", "T"):
            if getattr(self, name) < 2:
                raise ValueError(f"{name} must be >= 2, got {getattr(self, name)}")
        for name in ("gender_effect", "cog_effect", "task_effect", "noise_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")

    def to_dict(self):
        return asdict(self)


def task_names(n_tasks):
    if n_tasks <= len(CANONICAL_TASKS):
        return list(CANONICAL_TASKS[:n_tasks])
    return [f"task{k + 1}" for k in range(n_tasks)]


def subject_ids(n_subjects):
    width = max(3, len(str(n_subjects - 1)))
    return [f"sub-{i:0{width}d}" for i in range(n_subjects)]


def spatial_patterns(config: SynthConfig):
    rng = np.random.default_rng([config.seed, TAG_PATTERNS])
    n = config.n_rois
    return {
        "shared": rng.standard_normal((n, N_SHARED)),
        "gender": rng.standard_normal((2, n)),
        "cog": rng.standard_normal(n),
        "task": rng.standard_normal((config.n_tasks, n)),
    }


def population_labels(config: SynthConfig):
    rng = np.random.default_rng([config.seed, TAG_LABELS])
    gender = rng.integers(0, 2, size=config.n_subjects)
    cog = rng.uniform(0.0, 1.0, size=config.n_subjects)
    return gender, cog


def scan_series(config, patterns, subject, task, gender, cog):
    rng = np.random.default_rng([config.seed, TAG_SCAN, subject, task])
    t = config.T
    x = rng.standard_normal((t, N_SHARED)) @ patterns["shared"].T
    x += config.gender_effect * np.outer(rng.standard_normal(t), patterns["gender"][gender])
    x += config.cog_effect * cog * np.outer(rng.standard_normal(t), patterns["cog"])
    x += config.task_effect * np.outer(rng.standard_normal(t), patterns["task"][task])
    x += config.noise_std * rng.standard_normal((t, config.n_rois))
    return x


def generate_population(config: SynthConfig):
    """One ScanTimeSeries per (subject, task), subjects outer, tasks inner."""
    patterns = spatial_patterns(config)
    gender, cog = population_labels(config)
    tasks = task_names(config.n_tasks)
    scans = []
    for s, sid in enumerate(subject_ids(config.n_subjects)):
        for k, name in enumerate(tasks):
            data = scan_series(config, patterns, s, k, int(gender[s]), float(cog[s]))
            scans.append(ScanTimeSeries(sid, name, data, int(gender[s]), float(cog[s])))
    return scans
