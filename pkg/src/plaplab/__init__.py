"""Numerical laboratory for u_t - Delta_p u + |grad u|^q = 0 with 1 < p < 2.

Modules: ``exponents`` (thresholds and regime prediction), ``grid`` (1-D and
radial discretization), ``solver`` (time integration of the regularized
problem), ``functionals`` (norms, fits, extinction, gradient estimates),
``verify`` (Bernstein algebra and supersolutions), ``harness`` (configs,
sweeps, snapshots, plot data) and ``cli``.
"""
from .exponents import DomainError, Params, Regime, classify, critical_exponents

__version__ = "0.1.0"

__all__ = ["DomainError", "Params", "Regime", "classify", "critical_exponents", "__version__"]
