"""Explainable grid traffic-flow forecasting.

Rasterizes vehicle trajectories into in/out-flow tensors, predicts
near-future flows with pluggable baselines, and attributes predictions to
neighbor regions and individual trips via Shapley values.
"""

from .errors import (
    CapacityError,
    ConfigError,
    DataFormatError,
    DegenerateGameError,
    FlowshapError,
    InputError,
    MissingArtifactError,
    StateError,
)
from .explain import (
    Attribution,
    CoalitionGame,
    ExplainEngine,
    GlyphSummary,
    HistoricalMeanMasker,
    TrajectoryAttributionReport,
    ZeroMasker,
    attribute,
    cluster_game,
    glyph_summaries,
    grid_game,
    sector_summary,
    shapley_exact,
    shapley_mc,
    time_channel_report,
)
from .partition import (
    ClusterPartition,
    GridSpec,
    Intersection,
    build_partition,
    cluster_adjacency,
    cluster_regions,
    kmeans,
    parse_intersections,
    voronoi_regions,
)
from .predict import (
    FlowFrame,
    Forecast,
    PredictorSpec,
    predict_next,
    rolling_forecast,
    train,
)
from .trajdata import (
    FlowTensor,
    TrajectoryRecord,
    TrajectoryStore,
    build_flow_tensor,
    cell_sequence,
    parse_trajectories,
)

__version__ = "0.1.0"
