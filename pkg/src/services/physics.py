"""
Single-scattering electron physics: screened-Rutherford elastic scattering
and a Bethe stopping power with the Joy-Luo low-energy correction.

Energies are in keV unless a name says otherwise, lengths in nm.
"""
import math

import numpy as np
from scipy import constants

AVOGADRO = constants.Avogadro
ELECTRON_REST_ENERGY = 511.0  # keV
CM3_TO_NM3 = 1e-21


def mean_ionization_potential(z: int) -> float:
    """
    The mean_ionization_potential function returns the empirical mean
    ionization potential J (eV) of an element.

    :param z: Atomic number
    :return: J in eV
    """
    if z < 13:
        return 11.5 * z
    return 9.76 * z + 58.5 * z ** -0.19


def screening_parameter(z, energy):
    """Screening parameter alpha of the screened-Rutherford cross-section."""
    return 3.4e-3 * np.power(z, 0.67) / energy


def elastic_cross_section(z, energy, alpha=None):
    """
    The elastic_cross_section function returns the total screened-Rutherford
    cross-section in nm^2, with the relativistic correction factor.

    :param z: Atomic number
    :param energy: Electron energy in keV (scalar or array)
    :param alpha: Optional screening parameter overriding the empirical one
    :return: Cross-section in nm^2
    """
    energy = np.asarray(energy, dtype=float)
    if alpha is None:
        alpha = screening_parameter(z, energy)
    relativistic = ((energy + ELECTRON_REST_ENERGY)
                    / (energy + 2 * ELECTRON_REST_ENERGY)) ** 2
    return (5.21e-7 * z ** 2 / energy ** 2
            * 4 * math.pi / (alpha * (1 + alpha)) * relativistic)


def atom_density(density: float, a: float, mass_fraction: float = 1.0) -> float:
    """Atoms per nm^3 of one constituent."""
    return AVOGADRO * density * mass_fraction / a * CM3_TO_NM3


def mean_free_path(z: int, a: float, density: float, energy, alpha=None):
    """
    The mean_free_path function returns the elastic mean free path (nm) in a
    pure element.

    :param z: Atomic number
    :param a: Atomic weight in g/mol
    :param density: Density in g/cm^3
    :param energy: Electron energy in keV
    :param alpha: Optional screening parameter
    :return: Mean free path in nm
    """
    return 1.0 / (atom_density(density, a) * elastic_cross_section(z, energy, alpha))


def sample_free_paths(inverse_path, rng: np.random.Generator):
    """Exponential free flights (nm) for total inverse mean free paths (1/nm)."""
    inverse_path = np.asarray(inverse_path, dtype=float)
    return -np.log1p(-rng.random(inverse_path.shape)) / inverse_path


def sample_polar_cosine(alpha, u):
    """Inverse-CDF sample of cos(theta) for uniform deviates ``u``."""
    return 1.0 - 2.0 * alpha * u / (1.0 + alpha - u)


def sample_elastic_event(
    z: int,
    a: float,
    density: float,
    energy: float,
    rng: np.random.Generator,
    size=None,
    alpha=None,
):
    """
    The sample_elastic_event function draws one (or ``size``) elastic
    scattering events: an exponential free path, a polar deflection from the
    screened-Rutherford distribution and a uniform azimuth.

    :param z: Atomic number
    :param a: Atomic weight in g/mol
    :param density: Density in g/cm^3
    :param energy: Electron energy in keV, must be positive
    :param rng: numpy Generator supplying the deviates
    :param size: Number of samples, None for scalars
    :param alpha: Optional screening parameter of the angular distribution.
        The screening strength is 1/alpha: as it grows without bound the
        deflections collapse toward zero (a fully screened nucleus scatters
        forward), while a large alpha approaches isotropic scattering
    :return: (free path nm, polar deflection rad, azimuth rad)
    """
    if energy <= 0:
        raise ValueError('energy must be positive')
    if alpha is None:
        alpha = screening_parameter(z, energy)
    lam = mean_free_path(z, a, density, energy, alpha)
    free_path = -lam * np.log1p(-rng.random(size))
    cos_theta = np.clip(sample_polar_cosine(alpha, rng.random(size)), -1.0, 1.0)
    azimuth = 2 * math.pi * rng.random(size)
    return free_path, np.arccos(cos_theta), azimuth


def stopping_power(density: float, z_over_a: float, ionization_ev: float, energy):
    """
    The stopping_power function evaluates the Joy-Luo modified Bethe
    stopping power.

    :param density: Density in g/cm^3
    :param z_over_a: Sum of w_i * Z_i / A_i in mol/g
    :param ionization_ev: Mean ionization potential in eV
    :param energy: Electron energy in keV
    :return: -dE/ds in keV/nm, never negative
    """
    energy = np.asarray(energy, dtype=float)
    j = ionization_ev / 1000.0
    log_term = np.log(1.166 * (energy / j + 0.85))
    return np.maximum(7.85e-3 * density * z_over_a / energy * log_term, 0.0)


def material_stopping_power(material, energy):
    """Stopping power (keV/nm) of a :class:`Material`."""
    return stopping_power(
        material.density,
        material.electron_density_factor,
        material.mean_ionization_potential,
        energy,
    )


def continuous_energy_loss(material, energy: float, path_length: float) -> float:
    """
    The continuous_energy_loss function returns the energy (eV) lost along a
    straight step in the continuous-slowing-down approximation. The loss is
    clamped to the electron energy.

    :param material: Material the step lies in
    :param energy: Electron energy in keV, must be positive
    :param path_length: Step length in nm, must be non-negative
    :return: Energy lost in eV
    """
    if energy <= 0:
        raise ValueError('energy must be positive')
    if path_length < 0:
        raise ValueError('path_length must be non-negative')
    loss = float(material_stopping_power(material, energy)) * path_length
    return min(loss, energy) * 1000.0


def rotate_directions(cx, cy, cz, cos_theta, azimuth):
    """
    The rotate_directions function turns unit direction vectors by the polar
    angle ``arccos(cos_theta)`` and azimuth around their current direction.
    Works elementwise on arrays.

    :return: New (cx, cy, cz), renormalised
    """
    sin_theta = np.sqrt(np.maximum(1.0 - cos_theta ** 2, 0.0))
    cos_phi = np.cos(azimuth)
    sin_phi = np.sin(azimuth)
    near_axis = np.abs(cz) > 0.99999
    temp = np.sqrt(np.maximum(1.0 - cz ** 2, 1e-300))

    nx = np.where(
        near_axis,
        sin_theta * cos_phi,
        sin_theta * (cx * cz * cos_phi - cy * sin_phi) / temp + cx * cos_theta,
    )
    ny = np.where(
        near_axis,
        sin_theta * sin_phi,
        sin_theta * (cy * cz * cos_phi + cx * sin_phi) / temp + cy * cos_theta,
    )
    nz = np.where(
        near_axis,
        np.sign(cz) * cos_theta,
        -sin_theta * cos_phi * temp + cz * cos_theta,
    )
    norm = np.sqrt(nx ** 2 + ny ** 2 + nz ** 2)
    return nx / norm, ny / norm, nz / norm
