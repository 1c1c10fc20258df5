"""Joint probability trees over per-node independent-component coordinates."""

from .data_io import ColumnSpec, Dataset, Kind, load_csv, save_csv, split
from .errors import (
    DegenerateSupport,
    EmptyData,
    IcTreeError,
    InconsistentEvidence,
    InsufficientAcceptance,
    ParseError,
    SingularCovariance,
    UnknownCategory,
)
from .ica import IcaTransform, fast_ica
from .distributions import Multinomial, Qpd, multinomial_fit, qpd_fit
from .tree import Hyperparams, IcTreeModel, fit
from .inference import (
    Evidence,
    apply_evidence,
    avg_log_likelihood,
    conditional_moments,
    log_density,
    marginal_probability,
    mpe,
    sample,
)

__all__ = [
    "ColumnSpec",
    "Dataset",
    "Kind",
    "load_csv",
    "save_csv",
    "split",
    "DegenerateSupport",
    "EmptyData",
    "IcTreeError",
    "InconsistentEvidence",
    "InsufficientAcceptance",
    "ParseError",
    "SingularCovariance",
    "UnknownCategory",
    "IcaTransform",
    "fast_ica",
    "Multinomial",
    "Qpd",
    "multinomial_fit",
    "qpd_fit",
    "Hyperparams",
    "IcTreeModel",
    "fit",
    "Evidence",
    "apply_evidence",
    "avg_log_likelihood",
    "conditional_moments",
    "log_density",
    "marginal_probability",
    "mpe",
    "sample",
]

__version__ = "0.1.0"
