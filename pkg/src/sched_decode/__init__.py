"""Masked-diffusion decoding with progress-scheduled early exit.

The engine decodes a masked canvas step by step, watching an aggregate
top-2 logit margin over the answer region; once it clears a threshold
schedule evaluated at the current progress, every remaining mask is
filled in one shot. Providers supply logits (synthetic oracle, character
n-gram, or a wire-protocol client), and the harness scores quality/speed
trade-offs via QPS = speedup * (score/baseline)^gamma.
"""

from .bundles import LogitBundle, PositionLogits, validate_bundle
from .confidence import Aggregator, MarginVector, aggregate, mean_entropy, token_entropy, token_margin
from .diffusion import (
    AnswerRegion,
    BlockDiffusion,
    Canvas,
    FixedCount,
    FullSuffix,
    LowConfidenceTopK,
    MaskingProcess,
    TransferPolicy,
    Vocabulary,
    corrupt,
    resolve_policy,
    select_positions,
    survival_probability,
)
from .engine import (
    Argmax,
    CommitMode,
    DecodeResult,
    HardThreshold,
    Never,
    Sample,
    ScheduledStop,
    StepTrace,
    StopPolicy,
    decode,
    effective_threshold,
    evaluate_stop,
    progress,
)
from .errors import CheckMismatch, ConfigError, ProtocolError, ProviderError, TransportError
from .harness import (
    EntropyCurve,
    FailureRecord,
    RunRecord,
    Summary,
    entropy_curves,
    qps,
    run_benchmark,
    speedup,
)
from .providers import (
    Growth,
    LogitProvider,
    NgramProvider,
    OracleConfig,
    OracleProvider,
    WireProvider,
    oracle_truth_accuracy,
)
from .schedules import Family, ThresholdSchedule, threshold, validate

__version__ = "0.1.0"
