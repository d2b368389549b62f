"""Per-step cost of each loss: wall time, allocator peak and eig calls."""
import statistics
import time
import tracemalloc
from dataclasses import dataclass

import numpy as np

from . import datasets, linalg, pseudolabel
from .losses import LossKind, init_model, make_batch, make_spec, train_step
from .nn import AdamW

BENCH_COLUMNS = ("loss_kind", "dim", "median_ms", "mean_ms", "std_ms", "peak_bytes", "eig_calls", "steps")
WARMUP_STEPS = 50
TIMED_STEPS = 200
# Small bodies keep dim-32 runs within a few seconds; the heads, where the
# losses differ, keep their full size.
BENCH_ARCH = dict(hidden_layers=2, hidden_width=64, activation="elu")


@dataclass
class BenchRecord:
    loss_kind: str
    dim: int
    median_ms: float
    mean_ms: float
    std_ms: float
    peak_bytes: int
    eig_calls: int
    steps: int

    def row(self):
        return [getattr(self, c) for c in BENCH_COLUMNS]


def bench_one(loss, dim, n=None, batch=64, warmup=WARMUP_STEPS, steps=TIMED_STEPS, seed=0, arch=None,
              labels=None):
    """Time ``steps`` optimizer steps after ``warmup`` untimed ones.

    The eig counter covers every step, warm-up included. Peak bytes come
    from a separate traced step so tracing does not slow the timed ones.
    """
    loss = loss if isinstance(loss, LossKind) else LossKind(loss)
    n = n or max(4 * batch, 20 * dim)
    ds = datasets.gen_multivariate(dim, n, seed)
    spec = make_spec(loss, dim, dim, batch=batch, seed=seed, **(arch or BENCH_ARCH))
    if loss.needs_labels and labels is None:
        labels = pseudolabel.pseudo_labels(ds).sqrt_cov
    data = make_batch(ds, labels if loss.needs_labels else None)
    model = init_model(spec)
    opt_mean = AdamW(model.mean_net.params, spec.lr)
    opt_cov = AdamW(model.cov_net.params, spec.lr)
    rng = np.random.default_rng([seed, 7])
    batches = [data.take(rng.choice(n, batch, replace=False)) for _ in range(8)]

    times = []
    with linalg.count_eig_calls() as counter:
        for i in range(warmup + steps):
            sub = batches[i % len(batches)]
            t0 = time.perf_counter()
            train_step(model, loss, sub, opt_mean, opt_cov)
            if i >= warmup:
                times.append((time.perf_counter() - t0) * 1e3)
        started = not tracemalloc.is_tracing()
        if started:
            tracemalloc.start()
        tracemalloc.reset_peak()
        base = tracemalloc.get_traced_memory()[0]
        train_step(model, loss, batches[0], opt_mean, opt_cov)
        peak = tracemalloc.get_traced_memory()[1] - base
        if started:
            tracemalloc.stop()
    return BenchRecord(
        str(loss), dim,
        statistics.median(times) if times else 0.0,
        statistics.fmean(times) if times else 0.0,
        statistics.pstdev(times) if times else 0.0,
        int(peak), counter.calls, len(times),
    )


def run_bench(dims, losses, **kwargs):
    """One :class:`BenchRecord` per (dim, loss), dims outermost."""
    for d in dims:
        if d > 64:
            raise ValueError(f"bench dims must be <= 64, got {d}")
    kinds = [lo if isinstance(lo, LossKind) else LossKind(lo) for lo in losses]
    out = []
    for d in dims:
        labels = None
        if any(kd.needs_labels for kd in kinds):
            n = kwargs.get("n") or max(4 * kwargs.get("batch", 64), 20 * d)
            labels = pseudolabel.pseudo_labels(datasets.gen_multivariate(d, n, kwargs.get("seed", 0))).sqrt_cov
        for kd in kinds:
            out.append(bench_one(kd, d, labels=labels, **kwargs))
    return out
