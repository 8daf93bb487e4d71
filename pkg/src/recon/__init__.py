"""Reconstruction of static physical systems from sparse point measurements.

The central tool is the explicit constraint force method (ECFM): measurement
constraints are enforced through analyst-chosen force shapes whose magnitudes
are solved for, and unknown physics parameters are recovered by minimizing
the total constraint force. Penalty, Lagrange-multiplier, and energy-based
baselines live in :mod:`recon.baselines` for comparison.
"""

__version__ = "0.1.0"
