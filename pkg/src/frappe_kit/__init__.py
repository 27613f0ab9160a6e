"""Pressure-aware human motion capture toolkit.

Modules: body_model (kinematics and skinning), pressure_sim (mat synthesis
and summaries), contact (binary contact annotation), alignment (rigid and
similarity registration, resampling, onset detection), dataio (containers,
manifests, windows, splits, synthetic builder), nets (estimators), losses,
metrics, training, cli.
"""

__version__ = "0.1.0"
