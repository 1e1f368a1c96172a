"""
Empirical VaR/CVaR, smoothed CVaR and voltage-risk reporting.
"""

from voltrisk.risk.measures import (
    EmptyLossesError,
    RiskError,
    SmoothedCvar,
    TailTooSmallError,
    cvar,
    cvar_indicator,
    cvar_rockafellar,
    rockafellar_objective,
    smoothed_cvar,
    smoothed_cvar_grad,
    var,
)
from voltrisk.risk.report import (
    Histogram,
    RiskReport,
    loss_histogram,
    max_abs_deviation,
    risk_report,
    voltage_risk,
    write_histogram_csv,
)

__all__ = [
    "RiskError",
    "EmptyLossesError",
    "TailTooSmallError",
    "var",
    "cvar",
    "cvar_indicator",
    "cvar_rockafellar",
    "rockafellar_objective",
    "smoothed_cvar",
    "smoothed_cvar_grad",
    "SmoothedCvar",
    "RiskReport",
    "risk_report",
    "voltage_risk",
    "max_abs_deviation",
    "Histogram",
    "loss_histogram",
    "write_histogram_csv",
]
