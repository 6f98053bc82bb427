from .corruptions import (
    DEFAULT_SEVERITIES,
    KINDS,
    CorruptionSpec,
    corrupt,
    corrupt_batch,
    default_specs,
)
from .data import (
    Dataset,
    load_dataset,
    load_idx,
    save_dataset,
    synthesize_dataset,
    template_accuracy,
)
from .diagnostics import (
    LayerSpectrum,
    RobustnessTable,
    empirical_lipschitz,
    robustness_table,
    spectrum_report,
)

__all__ = [
    "DEFAULT_SEVERITIES",
    "KINDS",
    "CorruptionSpec",
    "Dataset",
    "LayerSpectrum",
    "RobustnessTable",
    "corrupt",
    "corrupt_batch",
    "default_specs",
    "empirical_lipschitz",
    "load_dataset",
    "load_idx",
    "robustness_table",
    "save_dataset",
    "spectrum_report",
    "synthesize_dataset",
    "template_accuracy",
]
