from datetime import datetime
from pathlib import Path
from typing import Dict, List, Literal, Optional

from pydantic import (
    BaseModel, DirectoryPath, Field, FilePath, field_validator, model_validator
)

from src.conf.config import settings
from src.services.geometry import GeometryKind, GeometryParams
from src.services.materials import (
    BUILTIN_MATERIALS, ELEMENTS, SEED_MAX, BeamConfig, Layer, LayerStack, Material
)
from src.services.psf import (
    ANALYTIC_B, ANALYTIC_BACKSCATTER_WEIGHT, ANALYTIC_FORWARD_SIGMA, TOP_BACKSCATTER_SHARE,
    TOP_FORWARD_SHARE,
)
from src.services.window import ResistThresholds


# Stack file schemas
class MaterialSpec(BaseModel):
    density: float = Field(gt=0)
    formula: Dict[str, float]

    @field_validator('formula')
    @classmethod
    def positive_counts(cls, value: Dict[str, float]):
        if not value or any(n <= 0 for n in value.values()):
            raise ValueError('formula needs positive atom counts')
        unknown = sorted(set(value) - set(ELEMENTS))
        if unknown:
            raise ValueError(f'unknown element symbol(s): {", ".join(unknown)}')
        return value


class LayerSpec(BaseModel):
    material: str
    thickness: float = Field(gt=0)


class SubstrateSpec(BaseModel):
    material: str


class BeamSpec(BaseModel):
    energy: float = Field(gt=0)
    beam_radius: float = Field(10.0, ge=0)
    trajectory_count: int = Field(ge=1)
    cutoff_energy: float = Field(default_factory=lambda: settings.cutoff_energy, gt=0)
    seed: int = Field(0, ge=0, le=SEED_MAX)
    record_depth: Optional[float] = Field(None, gt=0)


class StackFile(BaseModel):
    materials: Dict[str, MaterialSpec] = Field(default_factory=dict)
    layers: List[LayerSpec] = Field(default_factory=list)
    substrate: SubstrateSpec
    beam: BeamSpec

    model_config = {'extra': 'forbid'}

    @model_validator(mode='after')
    def materials_known(self):
        names = [layer.material for layer in self.layers] + [self.substrate.material]
        unknown = [n for n in names if n not in self.materials and n not in BUILTIN_MATERIALS]
        if unknown:
            raise ValueError(f'unknown material(s): {", ".join(sorted(set(unknown)))}')
        return self

    def material(self, name: str) -> Material:
        if name in self.materials:
            spec = self.materials[name]
            return Material.from_formula(name, spec.density, spec.formula)
        return BUILTIN_MATERIALS[name]()

    def to_stack(self) -> LayerStack:
        return LayerStack(
            layers=[Layer(material=self.material(layer.material), thickness=layer.thickness)
                    for layer in self.layers],
            substrate=self.material(self.substrate.material),
        )

    def to_beam(self, **overrides) -> BeamConfig:
        data = self.beam.model_dump()
        data.update({k: v for k, v in overrides.items() if v is not None})
        return BeamConfig(**data)


# Run configuration schemas
class KernelOptions(BaseModel):
    source: Literal['table', 'analytic'] = 'table'
    directory: Optional[DirectoryPath] = None
    pitch: float = Field(default_factory=lambda: settings.kernel_pitch, gt=0)
    half_width: float = Field(default_factory=lambda: settings.kernel_half_width, gt=0)
    bins: int = Field(default_factory=lambda: settings.psf_bins, ge=8)
    fit_r_min: float = Field(60.0, gt=0)
    fit_r_max: float = Field(360.0, gt=0)
    fit_channel: Literal['exited', 'backscattered', 'incident', 'total'] = 'exited'
    angular_bins: int = Field(45, ge=3)
    weighting: Literal['energy', 'count'] = 'energy'
    b: float = Field(ANALYTIC_B, gt=0, lt=2)
    forward_sigma: float = Field(ANALYTIC_FORWARD_SIGMA, gt=0)
    backscatter_weight: float = Field(ANALYTIC_BACKSCATTER_WEIGHT, gt=0)
    top_forward_share: float = Field(TOP_FORWARD_SHARE, gt=0, lt=1)
    top_backscatter_share: float = Field(TOP_BACKSCATTER_SHARE, gt=0, lt=1)

    @model_validator(mode='after')
    def consistent(self):
        if self.half_width < self.pitch:
            raise ValueError('half_width must be at least one pitch')
        if self.fit_r_min >= self.fit_r_max:
            raise ValueError('fit_r_min must be below fit_r_max')
        return self


class GeometryOptions(BaseModel):
    name: Optional[GeometryKind] = None
    layout: Optional[FilePath] = None
    params: GeometryParams = Field(default_factory=GeometryParams)

    @model_validator(mode='after')
    def one_source(self):
        if self.name is not None and self.layout is not None:
            raise ValueError('give either a geometry name or a layout file, not both')
        return self


class PecOptions(BaseModel):
    target: Optional[float] = Field(None, gt=0)
    tol: float = Field(0.01, gt=0)
    max_iter: int = Field(25, ge=1)
    min_factor: float = Field(default_factory=lambda: settings.pec_min_factor, gt=0)
    max_factor: float = Field(default_factory=lambda: settings.pec_max_factor, gt=0)


class SweepOptions(BaseModel):
    start: float = Field(350.0, ge=0)
    stop: float = Field(870.0, ge=0)
    step: float = Field(20.0, gt=0)
    geometries: List[GeometryKind] = Field(
        default_factory=lambda: [GeometryKind.horseshoe, GeometryKind.l_shape,
                                 GeometryKind.thin_dolan]
    )
    thresholds: Optional[ResistThresholds] = None
    calibrate_on: GeometryKind = GeometryKind.horseshoe
    window: float = Field(260.0, gt=0)
    anchor: float = Field(450.0, gt=0)
    sensitivity_ratio: float = Field(default_factory=lambda: settings.sensitivity_ratio,
                                     ge=3, le=4)

    @model_validator(mode='after')
    def ascending(self):
        if self.start > self.stop:
            raise ValueError(f'empty dose range {self.start} -> {self.stop}')
        return self


class RunConfig(BaseModel):
    stack: Optional[FilePath] = None
    events: Optional[FilePath] = None
    exits: Optional[FilePath] = None
    output_dir: Path = Field(default_factory=lambda: Path(settings.output_dir))
    seed: Optional[int] = Field(None, ge=0, le=SEED_MAX)
    threads: int = Field(default_factory=lambda: settings.threads, ge=1)
    trajectory_count: Optional[int] = Field(None, ge=1)
    oracle: bool = False
    kernel: KernelOptions = Field(default_factory=KernelOptions)
    geometry: GeometryOptions = Field(default_factory=GeometryOptions)
    pec: PecOptions = Field(default_factory=PecOptions)
    sweep: SweepOptions = Field(default_factory=SweepOptions)

    model_config = {'extra': 'forbid'}

    def canonical(self) -> dict:
        """Configuration as hashed into the output metadata."""
        data = self.model_dump(mode='json', exclude={'output_dir', 'threads'})
        return data


# Run registry schemas
class RunResponse(BaseModel):
    id: int
    command: str
    status: str
    config_hash: Optional[str]
    seed: Optional[int]
    output_dir: Optional[str]
    summary: Optional[dict]
    error: Optional[str]
    created_at: datetime

    class Config:
        from_attributes = True


# Service request schemas
class SimulationRequest(BaseModel):
    stack: StackFile
    threads: int = Field(default_factory=lambda: settings.threads, ge=1)


class KernelRequest(BaseModel):
    source: Literal['analytic', 'directory'] = 'analytic'
    directory: Optional[str] = None
    pitch: float = Field(default_factory=lambda: settings.kernel_pitch, gt=0)
    half_width: float = Field(default_factory=lambda: settings.kernel_half_width, gt=0)
    b: float = Field(ANALYTIC_B, gt=0, lt=2)
    forward_sigma: float = Field(ANALYTIC_FORWARD_SIGMA, gt=0)
    backscatter_weight: float = Field(ANALYTIC_BACKSCATTER_WEIGHT, gt=0)


class DosemapRequest(BaseModel):
    geometry: GeometryKind = GeometryKind.thin_dolan
    params: GeometryParams = Field(default_factory=GeometryParams)
    kernel: KernelRequest = Field(default_factory=KernelRequest)


class DosemapResponse(BaseModel):
    geometry: GeometryKind
    grid: List[int]
    metrics: dict


class PecRequest(DosemapRequest):
    target: Optional[float] = Field(None, gt=0)
    tol: float = Field(0.01, gt=0)
    max_iter: int = Field(25, ge=1)


class PecResponse(BaseModel):
    factors: Dict[str, float]
    residual: float
    iterations: int
    converged: bool
    gap_dose: Optional[float]


class SweepRequest(BaseModel):
    geometries: List[GeometryKind] = Field(
        default_factory=lambda: [GeometryKind.horseshoe, GeometryKind.l_shape,
                                 GeometryKind.thin_dolan]
    )
    kernel: KernelRequest = Field(default_factory=KernelRequest)
    thresholds: Optional[ResistThresholds] = None
    start: float = Field(350.0, ge=0)
    stop: float = Field(870.0, ge=0)
    step: float = Field(20.0, gt=0)


class SweepEntry(BaseModel):
    geometry: GeometryKind
    doses: List[float]
    states: List[str]
    window: Optional[List[float]]


class SweepResponse(BaseModel):
    thresholds: ResistThresholds
    results: List[SweepEntry]
