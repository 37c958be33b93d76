"""Numerical laboratory for the strongly stratified Boussinesq system."""

__version__ = "0.1.0"
