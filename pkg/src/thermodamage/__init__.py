"""Finite-element simulation of a thermoviscoelastic damage / phase-field system."""
