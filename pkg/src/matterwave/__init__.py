"""Forward and inverse simulation of far-field molecular diffraction at a nanograting.

The package is organised bottom-up:

* :mod:`matterwave.physics` -- constants, kinematics and beam velocity models
* :mod:`matterwave.transmission` -- grating transmission with the van der Waals phase
* :mod:`matterwave.propagation` -- paraxial diffraction integrals and 2D screen maps
* :mod:`matterwave.buildup` -- Monte Carlo arrivals and fluorescence camera frames
* :mod:`matterwave.localization` -- spot detection, Gaussian fitting, fringe metrics
* :mod:`matterwave.inversion` -- least-squares recovery of C3, smear and velocity model
* :mod:`matterwave.config`, :mod:`matterwave.fileio`, :mod:`matterwave.cli` -- I/O
"""

from matterwave.errors import (
    ConfigError,
    DomainError,
    FitError,
    MatterWaveError,
    NumericalError,
)
from matterwave.physics import (
    BeamlineGeometry,
    GratingSpec,
    MoleculeSpec,
    VelocityModel,
    de_broglie,
    diffraction_angle,
    fall_height,
    velocity_from_height,
    velocity_pdf,
)

__version__ = "0.1.0"

__all__ = [
    "BeamlineGeometry",
    "ConfigError",
    "DomainError",
    "FitError",
    "GratingSpec",
    "MatterWaveError",
    "MoleculeSpec",
    "NumericalError",
    "VelocityModel",
    "de_broglie",
    "diffraction_angle",
    "fall_height",
    "velocity_from_height",
    "velocity_pdf",
]
