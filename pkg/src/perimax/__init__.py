"""Least-perimeter partitions of star-shaped planar domains.

The package has three layers: capacity-constrained Voronoi tessellations
with exact area and perimeter derivatives (``voronoi_cap``), phase-field
relaxation of the perimeter on P1 finite elements (``fem``,
``phase_field``), and a shape gradient flow over Fourier-parametrized
star-shaped domains (``shape_opt``). ``optim`` holds the shared
quasi-Newton and augmented-Lagrangian machinery; ``cli`` exposes the
command-line entry points.
"""

__version__ = "0.1.0"
