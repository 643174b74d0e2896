from .compare import compare_runs, smoothness_diagnostic
from .manifest import verify_manifest, write_manifest
from .simulate import SyntheticConfig, simulate_survey, synthetic_cell_table
