"""Principal-stratification effect modification (PSEM) for a binary
post-randomization biomarker: scenario-based estimators adapted from the
survivor-average-causal-effect literature, two-phase sampling weights,
sensitivity analysis with ignorance/uncertainty intervals, and a
reproducible Monte Carlo study harness.
"""

__version__ = "0.1.0"

from .core import (CepResult, Contrast, RiskEstimates, Scenario,
                   SensitivityPoint, cep, check_assumptions,
                   estimate_identified, fit_scenario, fit_scenario_a,
                   fit_scenario_b, fit_scenario_c_harm,
                   fit_scenario_c_protect, mean_shift_cep, selection_sace,
                   Direction)
from .errors import (ConfigError, DataError, EstimationError,
                     IncompatibleSensitivityError, OrderingError, PsemError,
                     PositivityError, SeparationError)
from .estimating import EstimatingSystem, FitResult, delta_method, sandwich_cov, solve_system
from .records import DatasetSummary, Marker, ObservedRecord, load_csv, summarize, write_csv
from .sensitivity import (IntervalResult, SensitivityConfig, eui,
                          ignorance_interval, interval_for, sweep,
                          test_effect_modification)
from .simulate import (GeneratorConfig, PotentialRecord, StudyConfig,
                       StudyResult, apply_case_cohort, gen_scenario_b,
                       gen_scenario_c, oracle_estimands, run_study)
from .weights import WeightModel, WeightedRecords, effective_sample, fit_missingness

__all__ = [name for name in dir() if not name.startswith("_")]
