"""Sign-activation 01-loss networks trained by stochastic coordinate descent,
gradient-trained baselines, and hard-label robustness measurements."""

__version__ = "0.1.0"
