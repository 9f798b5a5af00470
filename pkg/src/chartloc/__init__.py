"""Classical wireless source localization (ToA multilateration, AoA
triangulation, joint maximum likelihood) and channel charting, verified
against a synthetic OFDM multipath channel simulator."""

from .model import (
    SPEED_OF_LIGHT,
    ArrayGeometry,
    Bounds,
    CsiTensor,
    Datapoint,
    Dataset,
    OfdmConfig,
    Scenario,
    ValidationReport,
    validate_dataset,
)
from .simulator import PathComponent, SimConfig, generate_dataset, paths_to_csi, synthesize_paths
from .subspace import (
    CovarianceEstimate,
    SourceEstimate,
    estimate_autocorrelation,
    estimate_source_count_mdl,
    forward_backward_average,
    root_music,
)
from .toa import ToaConfig, ToaEstimate, estimate_toa, estimate_toa_all
from .aoa import AoaEstimate, estimate_azimuth_aoa, estimate_aoa_all, extract_los_component
from .likelihoods import (
    EstimateBundle,
    QualityWeights,
    WeightConfig,
    build_estimate_bundle,
    compute_quality_weights,
    likelihood_aoa,
    likelihood_joint,
    likelihood_tdoa,
    likelihood_toa,
    rms_delay_spread,
)
from .solver import SolverConfig, SolveResult, grid_initialize, localize_dataset, maximize
from .dissimilarity import (
    AdpConfig,
    DissimilarityMatrix,
    compute_adp,
    csi_dissimilarity,
    estimate_scale_gamma,
    fuse_with_timestamps,
    geodesic_complete,
)
from .charting import (
    ChartModel,
    TrainConfig,
    combined_loss,
    extract_features,
    fcf_forward,
    fit_affine_transform,
    siamese_loss,
    train_augmented,
    train_siamese,
)
from .evaluation import (
    MetricReport,
    compare_methods,
    continuity_trustworthiness,
    kruskal_stress,
    position_error_stats,
)

__version__ = "0.1.0"
