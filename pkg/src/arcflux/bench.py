"""Single-window inference latency measurement.

Times the end-to-end classification path (amplitude-extrema transform
plus model forward) on one fixed window, using a monotonic clock, with
warmup iterations excluded and BLAS pinned to a single thread so the
numbers mean something on shared machines.

The core runs 64-bit; `float32=True` is the explicit benchmark-mode flag
that re-types a private copy of the parameters to 32-bit for the timed
run.  The reported stats echo the arithmetic width either way.
"""

from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass

import numpy as np

from .data import WINDOW_LEN
from .fas import FasConfig, fas_transform
from .model import ModelConfig, ModelParams, model_forward

try:
    from threadpoolctl import threadpool_limits
except ImportError:                                     # pragma: no cover
    threadpool_limits = None

__all__ = ["LatencyStats", "bench_inference", "stats_text", "stats_row", "STATS_ROW_HEADER"]

DEFAULT_ITERS = 1000
DEFAULT_WARMUP = 100


@dataclass(frozen=True)
class LatencyStats:
    p50: float
    p95: float
    mean: float
    min: float
    max: float
    fas_mean: float             # transform-only share of the mean, ms
    model_mean: float           # forward-only share of the mean, ms
    n_iters: int
    warmup_iters: int
    model_config: dict
    threads: int
    dtype: str

    def __post_init__(self):
        if not self.min <= self.p50 <= self.p95 <= self.max:
            raise ValueError("latency order statistics out of order")


def _limit_threads(n: int):
    if threadpool_limits is None:
        return contextlib.nullcontext()
    return threadpool_limits(limits=n)


def bench_inference(
    params: ModelParams,
    iters: int = DEFAULT_ITERS,
    warmup: int = DEFAULT_WARMUP,
    *,
    float32: bool = False,
    window: np.ndarray | None = None,
    threads: int = 1,
) -> LatencyStats:
    """Latency stats for classifying one window, ms, over `iters` runs."""
    if iters < 1:
        raise ValueError("iters must be at least 1")
    if warmup < 0:
        raise ValueError("warmup must be non-negative")
    cfg = params.config
    if window is None:
        window = np.random.default_rng(0).normal(1.7, 0.1, WINDOW_LEN)
    window = np.asarray(window, dtype=np.float64)
    if float32:
        from .training import cast_params_, clone_params

        params = clone_params(params)
        cast_params_(params, np.float32)
    fas_cfg = FasConfig(k=cfg.k_fas)
    split_ns = np.empty(iters, dtype=np.int64)      # transform share
    total_ns = np.empty(iters, dtype=np.int64)
    with _limit_threads(threads):
        for i in range(-warmup, iters):
            t0 = time.perf_counter_ns()
            feats = fas_transform(window, fas_cfg)
            t1 = time.perf_counter_ns()
            model_forward(params, feats)
            t2 = time.perf_counter_ns()
            if i >= 0:
                split_ns[i] = t1 - t0
                total_ns[i] = t2 - t0
    ms = total_ns / 1e6
    return LatencyStats(
        p50=float(np.percentile(ms, 50)),
        p95=float(np.percentile(ms, 95)),
        mean=float(ms.mean()),
        min=float(ms.min()),
        max=float(ms.max()),
        fas_mean=float(split_ns.mean() / 1e6),
        model_mean=float((total_ns - split_ns).mean() / 1e6),
        n_iters=iters,
        warmup_iters=warmup,
        model_config=cfg.to_dict(),
        threads=threads,
        dtype="float32" if float32 else "float64",
    )


def stats_text(stats: LatencyStats) -> str:
    """Structured text block with stable key order."""
    import json

    return json.dumps(vars(stats), indent=2, sort_keys=True) + "\n"


STATS_ROW_HEADER = "cell\tp50_ms\tp95_ms\tmean_ms\tmin_ms\tmax_ms\tn_iters\tdtype"


def stats_row(cell: str, stats: LatencyStats) -> str:
    return (
        f"{cell}\t{stats.p50:.4f}\t{stats.p95:.4f}\t{stats.mean:.4f}"
        f"\t{stats.min:.4f}\t{stats.max:.4f}\t{stats.n_iters}\t{stats.dtype}"
    )


def build_bench_model(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Fresh randomly initialized parameters for shape-only latency runs."""
    from .model import init_params

    return init_params(cfg, seed)
