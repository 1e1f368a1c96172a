"""
voltrisk - risk-aware learning of decentralized volt-var decision rules.

Generates optimal reactive-power dispatch datasets on radial feeders,
trains shared per-node neural policies under CVaR-regularized losses and
evaluates the resulting prediction and voltage-violation risk.
"""

__version__ = "0.1.0"
