"""Gaussian-mixture map compression and information-driven exploration in simulated caves."""
