"""Simulation of matrix-sentence speech recognition thresholds with an HMM-GMM listener model."""

__version__ = "0.1.0"
