"""Design-based difference-in-differences for staggered adoption.

Estimates group-time average treatment effects ATT(g, t) under three
nested parallel-trends conditions, aggregates them into event-study
curves and scalar summaries, stacks the identifying moments into a
two-step GMM system whose overidentification test probes the trend
restriction, and ships a multiplier bootstrap for simultaneous bands, a
two-way fixed-effects descriptive baseline, stratum-specific contrasts,
and a synthetic-panel generator with a known effect surface.
"""

__version__ = "0.1.0"

from .aggregate import (
    EventStudyCurve,
    EventStudyPoint,
    ScalarSummary,
    apply_bands,
    att_simple,
    delta_e_avg,
    delta_s,
    event_study,
    weight_event,
)
from .attgt import (
    METHODS,
    AttGtSet,
    GroupTimeResult,
    att_never,
    att_ny,
    att_ny_plus,
    att_ny_plus_pre,
    att_set,
    influence,
)
from .dgp import SCENARIOS, DgpConfig, scenario_config, simulate
from .errors import (
    CollinearDesign,
    DegenerateColumn,
    DuplicateCell,
    EmptyComparisonSet,
    EmptyTreatedCell,
    EstimationError,
    IneligibleGroup,
    InconsistentFirstTreat,
    InvalidShares,
    JustIdentified,
    NoCommonE,
    NoIdentifiedCells,
    NoPostCells,
    OmittedCellWarning,
    OverlapWarning,
    RankDeficientJacobian,
    SingularSigma,
    SmallGroupWarning,
    StagdidError,
    TooManyMoments,
    UnbalancedPanel,
    UnknownGroup,
    ValidationError,
)
from .gmm import (
    GmmFit,
    GmmModel,
    MomentSpec,
    att_from_gmm,
    build_moments,
    estimate_gmm,
    j_test,
)
from .hetero import (
    StrataVariant,
    att_strata,
    diff_curve,
    event_study_strata,
    summaries_strata,
)
from .inference import (
    Bands,
    BootstrapResult,
    bands,
    cluster_sums,
    clustered_covariance,
    multiplier_bootstrap,
    se_from_influence,
)
from .panel import (
    NEVER,
    PanelDataset,
    ValidationReport,
    cell_mask,
    load_panel,
    validate,
    write_panel_csv,
)
from .twfe import TwfeFit, twfe_dynamic, twfe_static, wald_joint

__all__ = [name for name in dir() if not name.startswith("_")]
