"""Partially linear models with wide two-layer network nuisances."""
from .debias import (
    DebiasResult,
    confidence_intervals,
    coverage,
    debiased_lasso,
    debinet_fit,
    measurement_correct,
    nw_post,
    ols_post,
)
from .kernel_reg import nw_bandwidth_cv, nw_fit, nw_predict
from .plm import NetNuisanceConfig, PlmEstimate, dml_fit, f_hat, plm_nn_fit, plm_nw_fit, plm_predict
from .selection import LassoSelector, lasso_fit, partition_design
from .synth_data import gen_complex, gen_table1, gen_table2, load_csv, write_csv
from .widenet import TrainConfig, init_network, train

__version__ = "0.1.0"

__all__ = [
    "DebiasResult", "LassoSelector", "NetNuisanceConfig", "PlmEstimate", "TrainConfig",
    "confidence_intervals", "coverage", "debiased_lasso", "debinet_fit", "dml_fit", "f_hat",
    "gen_complex", "gen_table1", "gen_table2", "init_network", "lasso_fit", "load_csv",
    "measurement_correct", "nw_bandwidth_cv", "nw_fit", "nw_post", "nw_predict", "ols_post",
    "partition_design", "plm_nn_fit", "plm_nw_fit", "plm_predict", "train", "write_csv",
]
