"""Trace-independence harness.

Runs a scenario `trials` times with a fixed public shape and fresh random
secret data, capturing the modeled access trace of each run; all traces
must be exactly equal. A deliberately leaky sort is included as the
negative control: it branches on comparisons and must be flagged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import random_dataset
from .inference import predict_margin_traced
from .oblivious import bitonic_comparators, next_pow2, oaccess_read, oaccess_write, osort
from .quantile import build_summary, merge_summaries, prune_summary
from .trace import AccessTrace, TracedArray, capture_trace
from .trainer import TrainParams, train_partitions

SCENARIOS = ("primitives", "quantile", "train", "predict")


@dataclass
class TraceCheckResult:
    scenario: str
    trials: int
    ok: bool
    events: int
    divergent_trial: int | None = None
    divergence_index: int | None = None

    def describe(self) -> str:
        if self.ok:
            return (
                f"PASS {self.scenario}: {self.trials} trials, "
                f"{self.events} events per trace, all identical"
            )
        return (
            f"FAIL {self.scenario}: trial {self.divergent_trial} diverges "
            f"from trial 0 at event index {self.divergence_index}"
        )


def _leaky_sort(arr: TracedArray) -> None:
    """Negative control: compare-exchange that skips writes when the pair
    is already ordered, so the write pattern leaks the data."""
    n = arr.n
    assert n == next_pow2(n), "demo sort wants power-of-two input"
    for lo, hi, ascending in bitonic_comparators(n):
        a = arr.read(lo)
        b = arr.read(hi)
        if (a > b) == ascending:
            arr.write(lo, b)
            arr.write(hi, a)


def _scenario_primitives(rng: np.random.Generator, leaky: bool):
    values = rng.standard_normal(33)
    pow2 = rng.standard_normal(32)
    idx = int(rng.integers(0, 16))

    def run():
        arr = TracedArray(values.copy())
        osort(arr)
        small = TracedArray(pow2.copy())
        if leaky:
            _leaky_sort(small)
        else:
            osort(small)
        v = oaccess_read(small, idx)
        oaccess_write(small, 31 - idx, v)
        ints = TracedArray(rng.integers(-100, 100, 16).astype(np.int64))
        osort(ints)
        return None

    return run


def _scenario_quantile(rng: np.random.Generator, leaky: bool):
    a_vals = rng.integers(0, 12, 64).astype(np.float64)
    b_vals = rng.integers(0, 12, 64).astype(np.float64)

    def run():
        sa = build_summary(TracedArray(a_vals.copy()), TracedArray(np.ones(64)))
        sb = build_summary(TracedArray(b_vals.copy()), TracedArray(np.ones(64)))
        pa = prune_summary(sa, 8)
        pb = prune_summary(sb, 8)
        return merge_summaries(pa, pb, 8)

    return run


def _scenario_train(rng: np.random.Generator, leaky: bool):
    X, y = random_dataset(rng, 128, 4, "binary:logistic")
    params = TrainParams(num_rounds=2, max_depth=3, num_bins=8, gamma=0.0)

    def run():
        return train_partitions([(X, y)], params)

    return run


def _scenario_predict(rng: np.random.Generator, leaky: bool):
    X, y = random_dataset(rng, 64, 4, "binary:logistic")
    params = TrainParams(num_rounds=2, max_depth=3, num_bins=8)
    model, _ = train_partitions([(X, y)], params)  # fast path, outside capture
    sample = rng.standard_normal(4)

    def run():
        return predict_margin_traced(model, TracedArray(sample + 0.0))

    return run


_BUILDERS = {
    "primitives": _scenario_primitives,
    "quantile": _scenario_quantile,
    "train": _scenario_train,
    "predict": _scenario_predict,
}


def run_scenario(
    scenario: str, trials: int = 10, seed: int = 0, leaky: bool = False
) -> TraceCheckResult:
    if scenario not in _BUILDERS:
        raise ValueError(f"unknown scenario {scenario!r}; pick from {SCENARIOS}")
    if trials < 2:
        raise ValueError("need at least 2 trials to compare traces")
    base: AccessTrace | None = None
    for trial in range(trials):
        rng = np.random.default_rng(seed + 1000 * trial)
        run = _BUILDERS[scenario](rng, leaky)
        _, trace = capture_trace(run)
        if base is None:
            base = trace
            continue
        div = base.first_divergence(trace)
        if div is not None:
            return TraceCheckResult(
                scenario, trials, False, len(base), divergent_trial=trial, divergence_index=div
            )
    return TraceCheckResult(scenario, trials, True, len(base))
