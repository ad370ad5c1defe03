"""arcflux: selective state-space classifier for arc-fault-like current windows.

The package splits into a small set of layers:

- `data`: synthetic waveform generation, windowing, stratified splits, and
  a checksummed on-disk dataset format.
- `fas`: the amplitude-extrema front-end that replaces a window by its K
  largest and K smallest samples.
- `ssm` / `autodiff` / `model`: the discretized state-space machinery, a
  minimal reverse-mode tape, and the gated-block classifier built on both.
- `training` / `metrics` / `bench`: Adam training loop, macro-averaged
  evaluation reports, and a single-window latency harness.
- `estimators`: scikit-learn compatible wrappers around all of the above.
- `cli`: the `arcflux` command (generate / train / eval / sweep / bench).
"""

from .bench import LatencyStats, bench_inference, stats_text
from .data import (
    DatasetManifest,
    GenConfig,
    SignalWindow,
    SplitDataset,
    WindowMeta,
    generate,
    load_dataset,
    save_dataset,
    split,
    window_signal,
    windows_to_arrays,
)
from .errors import (
    ArcfluxError,
    ChecksumMismatchError,
    ConfigError,
    DataFormatError,
    NumericalError,
    TruncatedBlobError,
    VersionMismatchError,
)
from .estimators import DCAMambaClassifier, FeatureAmplifier
from .fas import FasConfig, FasFeatures, amplify_batch, fas_batch, fas_transform
from .metrics import ConfusionMatrix, EvalReport, confusion, report, report_text
from .model import (
    HEAD_KINDS,
    ModelConfig,
    ModelParams,
    forward_batch,
    init_params,
    load_checkpoint,
    model_forward,
    param_count,
    save_checkpoint,
)
from .ssm import (
    ContinuousSsm,
    DiscreteSsm,
    SelectiveParams,
    discretize_zoh,
    scan_parallel,
    scan_sequential,
    selective_scan,
    ssm_kernel,
)
from .training import (
    EpochRecord,
    TrainConfig,
    TrainState,
    cross_entropy,
    evaluate,
    fit,
)

__version__ = "0.1.0"

__all__ = [
    "ArcfluxError",
    "ChecksumMismatchError",
    "ConfigError",
    "ConfusionMatrix",
    "ContinuousSsm",
    "DCAMambaClassifier",
    "DataFormatError",
    "DatasetManifest",
    "DiscreteSsm",
    "EpochRecord",
    "EvalReport",
    "FasConfig",
    "FasFeatures",
    "FeatureAmplifier",
    "GenConfig",
    "HEAD_KINDS",
    "LatencyStats",
    "ModelConfig",
    "ModelParams",
    "NumericalError",
    "SelectiveParams",
    "SignalWindow",
    "SplitDataset",
    "TrainConfig",
    "TrainState",
    "TruncatedBlobError",
    "VersionMismatchError",
    "WindowMeta",
    "amplify_batch",
    "bench_inference",
    "confusion",
    "cross_entropy",
    "discretize_zoh",
    "evaluate",
    "fas_batch",
    "fas_transform",
    "fit",
    "forward_batch",
    "generate",
    "init_params",
    "load_checkpoint",
    "load_dataset",
    "model_forward",
    "param_count",
    "report",
    "report_text",
    "save_checkpoint",
    "save_dataset",
    "scan_parallel",
    "scan_sequential",
    "selective_scan",
    "split",
    "ssm_kernel",
    "stats_text",
    "window_signal",
    "windows_to_arrays",
    "__version__",
]
