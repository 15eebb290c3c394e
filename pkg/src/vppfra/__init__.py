"""Learning the feasible region of a coal-mine virtual power plant from dispatch data."""
__version__ = "0.1.0"
