"""Stochastic chemostat: SDE simulation and Fokker-Planck approximation."""
