"""spherelab: spectral geometry on the sphere and the projective plane.

Laplace spectra of conformal metrics, spectral and energy indices of harmonic
maps into round spheres, exact arithmetic for the index case analysis, and
degenerating (bubbling) metrics realizing isoperimetric eigenvalue limits.
"""

__version__ = "0.1.0"
