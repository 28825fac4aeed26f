"""Benchmark: oblivious engine versus the plain reference, per backend.

Reports wall times for training (and batch prediction) at a fixed shape,
the oblivious-over-reference slowdown factor, and a kernel comparison
between the compiled extension and the numpy fallback when both are
available. The slowdown is only asserted to be finite; absolute numbers
are machine-dependent.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

from . import kernels
from .data import synth_classification
from .inference import predict
from .reference import reference_predict, reference_train
from .trainer import TrainParams, compute_bin_plan, train_partitions, WorkerState

log = logging.getLogger("oblivboost.bench")


@dataclass
class BenchReport:
    shape: dict
    reference_train_s: float
    reference_predict_s: float
    oblivious: dict[str, dict] = field(default_factory=dict)  # backend -> timings

    def lines(self) -> list[str]:
        s = self.shape
        out = [
            f"shape: n={s['n']} d={s['d']} bins={s['bins']} depth={s['depth']} rounds={s['rounds']}",
            f"reference (non-oblivious): train {self.reference_train_s:.3f}s, "
            f"predict {self.reference_predict_s:.3f}s",
        ]
        for backend, t in self.oblivious.items():
            out.append(
                f"oblivious [{backend}]: train {t['train_s']:.3f}s "
                f"(slowdown x{t['train_slowdown']:.1f}), predict {t['predict_s']:.3f}s "
                f"(slowdown x{t['predict_slowdown']:.1f})"
            )
        return out


def run_bench(
    n: int = 4096,
    d: int = 16,
    bins: int = 16,
    depth: int = 4,
    rounds: int = 1,
    seed: int = 0,
    backends: list[str] | None = None,
) -> BenchReport:
    X, y = synth_classification(n, d, seed=seed)
    params = TrainParams(
        objective="binary:logistic",
        num_rounds=rounds,
        max_depth=depth,
        num_bins=bins,
        gamma=0.0,
    )
    # one shared bin plan, computed outside the timers
    state = WorkerState(X, y, params)
    state.gradient_phase()
    plan = compute_bin_plan([state], bins)

    t0 = time.perf_counter()
    ref_model = reference_train(X, y, params, plan)
    t_ref_train = time.perf_counter() - t0
    t0 = time.perf_counter()
    reference_predict(ref_model, X)
    t_ref_pred = time.perf_counter() - t0

    report = BenchReport(
        {"n": n, "d": d, "bins": bins, "depth": depth, "rounds": rounds},
        t_ref_train,
        t_ref_pred,
    )

    chosen = backends if backends is not None else [kernels.active_name()]
    previous = kernels.active_name()
    try:
        for backend in chosen:
            kernels.set_active(backend)
            t0 = time.perf_counter()
            model, _ = train_partitions([(X, y)], params, bin_plan=plan)
            t_train = time.perf_counter() - t0
            t0 = time.perf_counter()
            predict(model, X)
            t_pred = time.perf_counter() - t0
            train_slow = t_train / t_ref_train if t_ref_train > 0 else math.inf
            pred_slow = t_pred / t_ref_pred if t_ref_pred > 0 else math.inf
            assert math.isfinite(train_slow), "slowdown must be finite"
            log.info(
                "backend=%s train=%.3fs (x%.1f) predict=%.3fs (x%.1f)",
                backend,
                t_train,
                train_slow,
                t_pred,
                pred_slow,
            )
            report.oblivious[backend] = {
                "train_s": t_train,
                "train_slowdown": train_slow,
                "predict_s": t_pred,
                "predict_slowdown": pred_slow,
            }
    finally:
        kernels.set_active(previous)
    return report
