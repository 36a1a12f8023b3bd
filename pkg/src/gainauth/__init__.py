"""Implicit authentication from phone usage: time-binned behavior models,
gain scoring, wedged attack simulation, weight training and evaluation."""

__version__ = "0.1.0"
