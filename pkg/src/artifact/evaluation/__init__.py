from .ablation import EXPERIMENTS, AblationReport, AblationRow, resolve_experiment, run_ablation
from .probe import (
    ProbeConfig,
    ProbeResult,
    cosine_similarity,
    extract_features,
    linear_probe,
    nearest_neighbors,
    pooled_grid,
)
