"""Python access to the cpe library: tasks, posterior programs, metrics and the CLI."""

import json

from . import _cpe
from ._cpe import (
    ConfigError,
    CpeError,
    DataError,
    InversionError,
    LookupError,
    NumericError,
    StructuralError,
    Task,
    analytic_posterior,
    c2st,
    make_task,
    moment_report,
    run_cli,
    simulate_dataset,
    task_names,
    two_cluster_ratio,
)

__all__ = [
    "ConfigError",
    "CpeError",
    "DataError",
    "InversionError",
    "LookupError",
    "NumericError",
    "StructuralError",
    "Task",
    "analytic_posterior",
    "c2st",
    "dag",
    "make_task",
    "moment_report",
    "observation",
    "posterior_program",
    "read_samples",
    "run_cli",
    "simulate_dataset",
    "task_names",
    "two_cluster_ratio",
]


def dag(task):
    """Prior program of a task as a dict with "nodes" and "edges"."""
    return json.loads(task.dag_json())


def observation(task, seed):
    return json.loads(task.observation_json(seed))


def posterior_program(prior_dag):
    """Returns (posterior dag dict, topological order, boolean dimension mask)."""
    post, order, mask = _cpe.posterior_program(json.dumps(prior_dag))
    return json.loads(post), order, mask


def read_samples(path):
    """Returns (samples array, metadata dict) for a samples CSV with its sidecar."""
    samples, meta = _cpe.read_samples(str(path))
    return samples, json.loads(meta)
