"""Synthetic tabular classification data with known ground truth, plus
baseline models and exact Shapley attributions for studying explainers."""

__version__ = "0.1.0"
