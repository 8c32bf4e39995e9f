"""Analytic-center cutting planes, Lagrangian duals and parallel branch-and-bound."""

__version__ = "0.1.0"
