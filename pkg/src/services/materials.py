"""
Materials, layer stacks and beam settings for the Monte Carlo transport.

Units: density g/cm^3, thickness nm, beam energy keV, cutoff eV.
"""
import math
from typing import List, Optional

from pydantic import BaseModel, Field, field_validator

from src.services.physics import mean_ionization_potential

# seeds are stored in a signed 64-bit registry column
SEED_MAX = 2 ** 63 - 1

# symbol: (Z, A g/mol)
ELEMENTS = {
    'H': (1, 1.008),
    'C': (6, 12.011),
    'N': (7, 14.007),
    'O': (8, 15.999),
    'Si': (14, 28.085),
    'Cu': (29, 63.546),
    'Ge': (32, 72.630),
    'W': (74, 183.84),
    'Au': (79, 196.967),
}


class Constituent(BaseModel):
    z: int = Field(ge=1)
    a: float = Field(gt=0)
    mass_fraction: float = Field(gt=0)


class Material(BaseModel):
    name: str
    density: float = Field(gt=0)
    composition: List[Constituent] = Field(min_length=1)

    model_config = {'frozen': True}

    @field_validator('composition')
    @classmethod
    def fractions_sum_to_one(cls, value: List[Constituent]):
        total = sum(c.mass_fraction for c in value)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f'mass fractions sum to {total!r}, expected 1')
        return value

    @property
    def electron_density_factor(self) -> float:
        """Sum of w_i * Z_i / A_i (mol/g)."""
        return sum(c.mass_fraction * c.z / c.a for c in self.composition)

    @property
    def mean_ionization_potential(self) -> float:
        """
        Mean ionization potential in eV, combined from the elemental values
        by Bragg additivity (weights w_i * Z_i / A_i).
        """
        weights = [c.mass_fraction * c.z / c.a for c in self.composition]
        log_j = sum(
            w * math.log(mean_ionization_potential(c.z))
            for w, c in zip(weights, self.composition)
        )
        return math.exp(log_j / sum(weights))

    @classmethod
    def from_formula(
        cls, name: str, density: float, formula: dict[str, float]
    ) -> 'Material':
        """
        The from_formula function builds a material from a stoichiometry such
        as ``{'C': 5, 'H': 8, 'O': 2}``.

        :param name: Material name
        :param density: Density in g/cm^3
        :param formula: Atom counts per element symbol
        :return: A Material with normalised mass fractions
        """
        unknown = [s for s in formula if s not in ELEMENTS]
        if unknown:
            raise ValueError(f'unknown element symbol(s): {", ".join(unknown)}')
        masses = {s: n * ELEMENTS[s][1] for s, n in formula.items()}
        molar = sum(masses.values())
        composition = [
            Constituent(
                z=ELEMENTS[s][0], a=ELEMENTS[s][1],
                mass_fraction=masses[s] / molar
            )
            for s in formula
        ]
        # keep the sum exactly representable-close to 1
        drift = 1.0 - sum(c.mass_fraction for c in composition)
        last = composition[-1]
        composition[-1] = last.model_copy(
            update={'mass_fraction': last.mass_fraction + drift}
        )
        return cls(name=name, density=density, composition=composition)


class Layer(BaseModel):
    material: Material
    thickness: float = Field(gt=0)

    model_config = {'frozen': True}


class LayerStack(BaseModel):
    layers: List[Layer] = Field(default_factory=list)
    substrate: Material

    model_config = {'frozen': True}

    @property
    def thickness(self) -> float:
        return float(sum(layer.thickness for layer in self.layers))

    @property
    def interfaces(self) -> List[float]:
        """Depths of the layer tops followed by the substrate top (nm)."""
        depths = [0.0]
        for layer in self.layers:
            depths.append(depths[-1] + layer.thickness)
        return depths

    def layer_range(self, index: int) -> tuple[float, float]:
        depths = self.interfaces
        return depths[index], depths[index + 1]

    @property
    def identifier(self) -> str:
        parts = [f'{layer.material.name}{layer.thickness:g}' for layer in self.layers]
        return '/'.join(parts + [self.substrate.name])


class BeamConfig(BaseModel):
    energy: float = Field(gt=0, description='keV')
    beam_radius: float = Field(ge=0, description='Gaussian sigma, nm')
    trajectory_count: int = Field(ge=1)
    cutoff_energy: float = Field(50.0, gt=0, description='eV')
    seed: int = Field(0, ge=0, le=SEED_MAX)
    record_depth: Optional[float] = Field(None, gt=0)

    model_config = {'frozen': True}

    @property
    def below_cutoff(self) -> bool:
        return self.energy * 1000.0 <= self.cutoff_energy

    @property
    def identifier(self) -> str:
        return (
            f'{self.energy:g}keV-r{self.beam_radius:g}nm-'
            f'N{self.trajectory_count}-seed{self.seed}'
        )


def pmma() -> Material:
    return Material.from_formula('PMMA', 1.14, {'C': 5, 'H': 8, 'O': 2})


def mma() -> Material:
    return Material.from_formula('MMA', 0.80, {'C': 5, 'H': 8, 'O': 2})


def silicon() -> Material:
    return Material.from_formula('Si', 2.33, {'Si': 1})


BUILTIN_MATERIALS = {
    'PMMA': pmma,
    'MMA': mma,
    'Si': silicon,
    'Cu': lambda: Material.from_formula('Cu', 8.96, {'Cu': 1}),
    'Au': lambda: Material.from_formula('Au', 19.32, {'Au': 1}),
}


def junction_stack() -> LayerStack:
    """PMMA 230 nm over MMA copolymer 500 nm on silicon."""
    return LayerStack(
        layers=[
            Layer(material=pmma(), thickness=230.0),
            Layer(material=mma(), thickness=500.0),
        ],
        substrate=silicon(),
    )
