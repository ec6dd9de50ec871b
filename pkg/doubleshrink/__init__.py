"""doubleshrink - Double shrinkage estimation of the global minimum variance portfolio."""

__version__ = "0.1.0"
