"""stkd: spatio-temporal knowledge distillation for traffic forecasting.

A graph-aware teacher, a graph-free MLP student, dual-level (spatial +
temporal) distillation with adaptive per-node weighting, and harnesses for
accuracy, inference latency, and over-smoothing depth studies. All numerics
are float64 on a small reverse-mode autodiff tape.
"""

__version__ = "0.1.0"
