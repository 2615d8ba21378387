"""
heatcost -- numerical laboratory for support-dependent null-control costs
of the heat equation.

Modules
-------
geometry
    Uniform grids, node-mask subdomains, dilations and lumped quadrature.
elliptic
    Flux-form finite differences for ``-div(A grad u)`` and the full
    mass-orthonormal eigendecomposition.
spectral_inequality
    Optimal constants of spectral inequalities on ``E_lambda`` and their
    exponential envelopes.
heat
    Exact modal and Crank--Nicolson solvers for the controlled heat equation.
control
    Three-phase and Gramian-optimal null controls, worst-case costs and cost
    curves.
threesphere
    Empirical three-sphere interpolation probe with partial boundary data.
reference
    Brute-force oracles used for cross-checks.
cli
    Experiment runner writing reproducible CSV/JSON artifacts.
"""

__version__ = "0.1.0"
