"""Uncertainty-aware vision-language segmentation on a numpy autodiff engine."""
