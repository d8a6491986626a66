"""Posterior-sampling control of queueing MDPs: environments, learners, diagnostics."""

__version__ = "0.1.0"
