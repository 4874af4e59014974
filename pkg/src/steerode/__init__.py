"""Neural-ODE training with stochastic end-time (STEER) regularization."""

__version__ = "0.1.0"
