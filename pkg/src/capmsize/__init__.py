"""Size-dependent CAPM: estimation from decile panels and simulation of the
relative-size SDE system."""
from .errors import (
    AlignmentError, BlowUpError, CapmSizeError, ComputationError, ConfigError, CoverageError,
    DegenerateError, DomainError, FactorizationError, InputError, ParseError, PreconditionError,
    SingularityError,
)
from .model import (
    Branch, CoefficientSpec, MarketModel, coefficients, diffusion_tilde_sq, drift_tilde,
    eval_coefficients, linear_model, phi_inverse, phi_map, wealth_drift_diffusion,
)
from .returns import (
    ReturnSeries, equity_premium, riskfree_geometric, to_arithmetic, to_geometric, window_aggregate,
)
from .ingest import ReturnPanel, build_panel, parse_decile_csv, parse_rate_csv
from .estimate import (
    EstimationReport, NoiseFit, OlsFit, acf, fit_noise, funds_regression, jarque_bera, ljung_box,
    noise_cross_correlation, ols, residual_series, run_estimation, windowed_betas,
)
from .simulate import (
    InitialState, SimulationConfig, SimulationEnsemble, euler_step, exact_linear_paths,
    sample_benchmark_increments, sample_idiosyncratic, simulate,
)
from .analysis import (
    CurveSnapshot, StabilityVerdict, StationaryDensity, curve_snapshot, long_run_weight_stats,
    market_weights, stability_check, stationary_density,
)

__version__ = "0.1.0"
