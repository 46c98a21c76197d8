"""Testing approximate slope homogeneity in large linear panels."""

__version__ = "0.1.0"

from .bias import HeterogeneityPath, Variant, bias_hat, bias_hat_pred, build_path, residual_autocov
from .baselines import BaselineResult, beta_pool, pesaran_delta, swamy_stat
from .panel import PanelData, PanelSchema, demean_full, load_panel_csv, save_panel_csv, validate_window_feasibility
from .selfnorm import (
    QuantileTable,
    TestResult,
    WeightMeasure,
    load_table,
    run_test,
    save_table,
    simulate_w_sample,
    v_hat,
    w_hat,
)
from .sequential import (
    KappaGrid,
    SlopeEstimates,
    beta_pred_window,
    mean_group,
    ols_window,
    s_hat,
    s_hat_pred,
    unit_slopes,
)
