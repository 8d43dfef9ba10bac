"""Numerical toolkit for sharp constants of weighted Sobolev-type inequalities
on cones, wedges and half-spaces."""

__version__ = "0.1.0"
