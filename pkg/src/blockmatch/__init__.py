"""Streaming correlated matching decoder for detector error models."""

from .buffer import DEFAULT_CAPACITY, BufferError, GraphBuffer
from .correlations import (
    ReweightError,
    ReweightLog,
    SeedEdgeSet,
    apply_preweights,
    select_seed_edges,
    undo_reweights,
)
from .engine import (
    BLOCK_LEADING,
    BLOCK_TRAILING,
    GRAPH_BOUNDARY,
    BlockResult,
    EngineError,
    Matching,
    MatchRecord,
    RegionFactory,
    RegionView,
    decode_block,
    decode_exact,
    fuse,
    resolve_window,
    view_from_matching_graph,
)
from .harness import (
    FitResult,
    HarnessError,
    LambdaResult,
    ShotSample,
    compute_lambda,
    detection_fraction,
    fit_epsilon,
    logical_error_probability,
    one_point_epsilon,
    oracle_decode,
    sample_shots,
)
from .model import (
    BOUNDARY,
    DemError,
    Edge,
    ErrorMechanism,
    MatchingGraph,
    NoiseModel,
    Part,
    build_matching_graph,
    merge_probabilities,
    parse_dem,
    weight_from_probability,
)
from .parallel import (
    BlockPlan,
    PipelineDecoder,
    Prediction,
    choose_block_size,
    plan_fusion,
)
from .stream import (
    LatencyRecord,
    MetricsSink,
    ShotLatency,
    StreamFormatError,
    StreamHeader,
    StreamReader,
    StreamWriter,
    TimingBudget,
    emit_prediction,
    read_frames,
    replay,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
