"""Fourier-Galerkin tools for steering 3D Navier-Stokes flows on the torus with low-dimensional forcing."""

__version__ = "0.1.0"
