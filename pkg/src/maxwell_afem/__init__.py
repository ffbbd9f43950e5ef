"""Adaptive lowest-order edge element eigensolver for Maxwell cavities."""
