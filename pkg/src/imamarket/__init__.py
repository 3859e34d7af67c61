"""Regime-switching jump-diffusion markets: simulation, martingale measure, replication and optimal portfolios."""

__version__ = "0.1.0"
