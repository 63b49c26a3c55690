"""Lindblad simulation of a Rydberg atom coupled to charged nanocantilevers."""
