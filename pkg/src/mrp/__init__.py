"""Multilevel regression and poststratification of vote by state and income."""

from .data import (CellTable, SurveyDataset, SurveySchema, load_cell_table, load_survey, validate_compatibility,
                   write_cell_table, write_survey)
from .model import ModelSpec, ParameterVector, Posterior, build_index, log_posterior, survey_data
from .poststrat import EstimateSeries, estimate_series, poststratify, predict_cells
from .states import STATE_CODES, state_code, states_for_filter

__version__ = "0.1.0"
