"""Solver and verification harness for viscoelastic wave equations with a
singular power-law memory kernel on domains with prescribed, growing cracks.

The package is organized around the implicit time-discretization of the
history-convolution momentum balance:

``kernel``    memory kernels, fractional-derivative quadrature, sampled grids
``domain``    cracked meshes, release schedules, constrained spaces
``assembly``  mass/stiffness matrices, load and boundary-data sampling
``stepper``   the implicit scheme, trajectories and interpolants
``energy``    discrete energy bookkeeping and inequality margins
``analysis``  regularization sweeps, positivity, uniqueness, convergence
``cli``       config-driven orchestration and report emission
"""

__version__ = "0.1.0"
