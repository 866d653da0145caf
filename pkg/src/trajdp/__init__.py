"""Differentially private spatial histograms of trajectories for range queries."""

from .consistency import consistent_inference, greedy_repair
from .errors import (
    BudgetError,
    DimensionError,
    ParseError,
    RasterizeError,
    SolverError,
    TrajDPError,
    ValidationError,
)
from .evaluation import avg_l1_error, dqam_publish, gen_queries, kld, lm_publish, mwem_face_publish
from .histogram import RangeQuery, SpatialHistogram, answer_queries, build_from_cell_paths, check_consistency, eval_range_query
from .partition import PartitionSet, Region, partition
from .privacy import BudgetAccountant, NoiseSource, PrivacyBudget, split_budget
from .synthesis import SynthesisConfig, synthesize
from .trajectories import GridSpec, RawTrajectory, ingest, rasterize

__version__ = "0.1.0"
