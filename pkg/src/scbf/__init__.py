"""Stochastic convective Brinkman-Forchheimer flow on the periodic torus."""
