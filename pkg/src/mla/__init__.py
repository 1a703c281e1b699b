"""Magnifying-lens abstraction solvers for turn-based stochastic games."""
