"""Self-similar Navier-Stokes profiles from homogeneous degree -1 data.

Builds small self-similar solutions by Picard iteration of the mild
formulation and verifies explicit far-field expansions of the profile
against the computed solutions.
"""

__version__ = "0.1.0"
