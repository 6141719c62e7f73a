"""Penalized comparison to overfitting for sequence-model estimation."""
