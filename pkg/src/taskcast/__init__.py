"""Task-based day-ahead load forecasting for stochastic economic dispatch.

A four-layer residual neural forecaster is trained end-to-end against the
realized cost of the day-ahead dispatch decisions made from its forecasts.
The dispatch problem is a smoothed stochastic economic dispatch solved by
sequential quadratic programming; gradients flow back through the optimizer
via KKT sensitivity analysis.
"""

__version__ = "0.1.0"
