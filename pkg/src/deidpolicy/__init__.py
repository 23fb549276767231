"""Forecast re-identification risk of person-level disease surveillance data
and select weekly de-identification policies from expected case volumes."""

__version__ = "0.1.0"

from .engine import (
    RNG_ALGORITHM,
    ReplicateTrace,
    draw_without_replacement,
    replicate_rng,
    simulate_replicate,
    simulate_single_draw,
)
from .errors import (
    AlignmentError,
    DeidPolicyError,
    InsufficientPopulationError,
    InvalidPolicyCodeError,
    ScheduleMismatchError,
    ValidationError,
)
from .planner import (
    CATEGORIES,
    DEFAULT_GRID,
    WITHHOLD,
    CountyCategory,
    EvaluationReport,
    PreferenceRule,
    ReleaseDecision,
    SearchTable,
    builtin_k_anonymous_policy,
    category_for,
    distribute_weekly_forecast,
    evaluate_sequence,
    plan_decisions,
    policy_risk_profiles,
    search_county,
    select_policy,
    summarize_by_category,
    weekly_selection_statistic,
)
from .population import (
    AtomicBin,
    PopulationTable,
    aggregate,
    load_population,
    population_group_size,
)
from .risk import (
    RiskDistribution,
    RiskParams,
    marketer_risk,
    meets_threshold,
    pk_risk_at,
    pk_risk_profile,
    pk_risk_weekly,
    summarize,
    summarize_matrix,
)
from .series import CaseSeries, load_case_series, load_forecasts, week_start
from .taxonomy import (
    DEFAULT_HIERARCHY_YAML,
    GeneralizationPolicy,
    GeneralizedKey,
    HierarchySet,
    default_hierarchy,
    enumerate_policies,
    generalize_bin,
    generalizes,
    load_hierarchy,
    parse_policy_code,
)
