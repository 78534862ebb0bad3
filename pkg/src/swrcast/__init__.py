"""Sliding-window regression load forecasting.

A small numpy library that retrains a regressor on a sliding window of
recent load data, sizes that window from the series' dominant period
(Lomb-Scargle periodogram), and adapts its prediction horizon to the
observed batch MAPE. Ships four from-scratch comparison regressors
(epsilon-SVR/SMO, least squares, CART tree, random forest), a backtesting
harness, and a CLI.
"""

from .data import (
    CsvFormatError,
    DriftSpec,
    LoadSeries,
    SynthConfig,
    generate_synthetic,
    load_csv_file,
    parse_load_csv,
    serialize_load_csv,
    slice_window,
    write_csv_file,
)
from .engine import (
    BatchRecord,
    EngineConfig,
    EngineState,
    ForecastTrace,
    InsufficientDataError,
    NonFiniteForecastError,
    StepRecord,
    read_steps_csv,
    recursive_forecast,
    run_baseline,
    run_swr,
    update_prediction_window,
    write_batches_csv,
    write_steps_csv,
)
from .metrics import (
    MetricReport,
    MetricRow,
    acper,
    compare_report,
    mae,
    mape,
    rmse,
    rmspe,
    write_report_csv,
)
from .regressors import (
    FittedRegressor,
    ForestParams,
    LagMatrix,
    Scaler,
    SvrParams,
    TreeParams,
    fit_forest,
    fit_linear,
    fit_regressor,
    fit_scaler,
    fit_svr_smo,
    fit_tree,
    make_lag_matrix,
    predict,
    rbf_kernel,
)
from .spectral import (
    ConstantSeriesError,
    FrequencyGrid,
    Periodogram,
    SizingConfig,
    WindowSizing,
    build_freq_grid,
    false_alarm_probability,
    lomb_scargle_direct,
    lomb_scargle_fast,
    training_window_size,
)

__version__ = "0.1.0"
