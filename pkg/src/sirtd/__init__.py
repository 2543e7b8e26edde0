"""SIRTD-with-tweets epidemic workbench: agent-based simulation, ODE model and MCMC fitting."""

__version__ = "0.1.0"
