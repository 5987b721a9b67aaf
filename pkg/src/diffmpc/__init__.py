"""Model predictive control and online parameter estimation through
differentiable simulators."""

__version__ = "0.1.0"
