"""Benchmark suites, tuning, slope studies and timing."""
from .analysis import (SlopeEstimate, VanTreesCheck, VanTreesEstimate, estimate_van_trees_constants,
                       sample_c3, slope_regression, van_trees_check)
from .config import ConfigError, ExperimentConfig, build_config, load_config, reference_grid
from .suites import (GridResult, SuiteResult, grid_search, make_environment, random_ellipsoid,
                     run_suite, runtime_bench, select_best, summarize)
