"""
Parameterised Josephson junction layouts: thin Dolan, L, horseshoe and the
X junction with booster zones.

All builders put the bridge (the unexposed gap between the two electrodes)
at the field centre, with the gap running along y.
"""
import math
from enum import Enum

from pydantic import BaseModel, Field, model_validator

from src.services.errors import EblValidationError
from src.services.layout import PatternLayout, ProbeLines, Shape

PROBE_MARGIN = 200.0
HORIZONTAL_HALF_LENGTH = 500.0


class GeometryKind(str, Enum):
    thin_dolan = 'thin-dolan'
    l_shape = 'l-shape'
    horseshoe = 'horseshoe'
    x_junction = 'x-junction'


class GeometryParams(BaseModel):
    """Junction dimensions in nm; defaults are approximations of the usual designs."""
    width: float = Field(10_000.0, gt=0)
    height: float = Field(10_000.0, gt=0)
    gap: float = Field(300.0, ge=100, le=500)
    finger_width: float = Field(150.0, ge=50)
    finger_length: float = Field(1500.0, gt=0)
    lead_width: float = Field(1000.0, ge=50)
    lead_margin: float = Field(1000.0, ge=0)
    arm_width: float = Field(500.0, ge=50)
    horseshoe_span: float = Field(3000.0, gt=0)
    horseshoe_depth: float = Field(1500.0, gt=0)
    l_length: float = Field(3000.0, gt=0)
    l_arm_width: float = Field(800.0, ge=50)
    base_dose: float = Field(400.0, gt=0)
    booster_factor: float = Field(4.0, gt=0)
    booster_size: float = Field(800.0, gt=0)
    booster_offset: float = Field(1000.0, gt=0)

    model_config = {'frozen': True, 'extra': 'forbid'}

    @model_validator(mode='after')
    def fits_in_field(self):
        cy = self.height / 2
        if cy - self.gap / 2 - self.finger_length <= self.lead_margin:
            raise ValueError('finger_length leaves no room for the lower lead')
        if self.horseshoe_span <= 2 * self.arm_width + self.finger_width:
            raise ValueError('horseshoe_span must exceed two arms plus the finger')
        if self.horseshoe_depth <= self.arm_width:
            raise ValueError('horseshoe_depth must exceed arm_width')
        if self.l_length <= self.l_arm_width + self.finger_width:
            raise ValueError('l_length must exceed l_arm_width plus finger_width')
        if self.width / 2 - self.finger_width / 2 + self.l_length >= self.width:
            raise ValueError('l_length runs past the field edge')
        if self.booster_offset * 2 > min(self.width, self.height) - self.booster_size:
            raise ValueError('boosters do not fit in the field')
        return self


def _rect(xmin, ymin, xmax, ymax):
    return ((xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax))


def _probes(p: GeometryParams) -> ProbeLines:
    cx, cy = p.width / 2, p.height / 2
    half = p.gap / 2 + PROBE_MARGIN
    return ProbeLines(
        vertical=((cx, cy - half), (cx, cy + half)),
        horizontal=((cx - HORIZONTAL_HALF_LENGTH, cy), (cx + HORIZONTAL_HALF_LENGTH, cy)),
        bridge_extent=p.gap,
        bridge_width=p.finger_width,
    )


def _lower_electrode(p: GeometryParams) -> list[Shape]:
    cx, cy = p.width / 2, p.height / 2
    tip = cy - p.gap / 2
    root = tip - p.finger_length
    return [
        Shape('lower_finger', _rect(cx - p.finger_width / 2, root, cx + p.finger_width / 2, tip)),
        Shape('lower_lead', _rect(cx - p.lead_width / 2, p.lead_margin,
                                  cx + p.lead_width / 2, root)),
    ]


def thin_dolan(p: GeometryParams) -> list[Shape]:
    cx, cy = p.width / 2, p.height / 2
    tip = cy + p.gap / 2
    root = tip + p.finger_length
    return _lower_electrode(p) + [
        Shape('upper_finger', _rect(cx - p.finger_width / 2, tip, cx + p.finger_width / 2, root)),
        Shape('upper_lead', _rect(cx - p.lead_width / 2, root,
                                  cx + p.lead_width / 2, p.height - p.lead_margin)),
    ]


def l_shape(p: GeometryParams) -> list[Shape]:
    cx, cy = p.width / 2, p.height / 2
    x0 = cx - p.finger_width / 2
    x1 = x0 + p.l_length
    y0 = cy + p.gap / 2
    y1 = y0 + p.l_arm_width
    top = p.height - p.lead_margin
    return _lower_electrode(p) + [
        Shape('upper_l', (
            (x0, y0), (x1, y0), (x1, top), (x1 - p.l_arm_width, top),
            (x1 - p.l_arm_width, y1), (x0, y1),
        )),
    ]


def horseshoe(p: GeometryParams) -> list[Shape]:
    cx, cy = p.width / 2, p.height / 2
    left = cx - p.horseshoe_span / 2
    right = cx + p.horseshoe_span / 2
    bar = cy + p.gap / 2
    crown = bar + p.arm_width
    feet = crown - p.horseshoe_depth
    return _lower_electrode(p) + [
        Shape('upper_horseshoe', (
            (left, feet), (left + p.arm_width, feet), (left + p.arm_width, bar),
            (right - p.arm_width, bar), (right - p.arm_width, feet), (right, feet),
            (right, crown), (left, crown),
        )),
        Shape('upper_lead', _rect(cx - p.lead_width / 2, crown,
                                  cx + p.lead_width / 2, p.height - p.lead_margin)),
    ]


def _octagon(cx, cy, size):
    half = size / 2
    chamfer = half * math.tan(math.pi / 8)
    return (
        (cx - chamfer, cy - half), (cx + chamfer, cy - half),
        (cx + half, cy - chamfer), (cx + half, cy + chamfer),
        (cx + chamfer, cy + half), (cx - chamfer, cy + half),
        (cx - half, cy + chamfer), (cx - half, cy - chamfer),
    )


def x_junction(p: GeometryParams) -> list[Shape]:
    cx, cy = p.width / 2, p.height / 2
    d = p.booster_offset
    boosters = [
        Shape(f'booster_{name}', _octagon(cx + sx * d, cy + sy * d, p.booster_size),
              dose_factor=p.booster_factor, tag='booster')
        for name, sx, sy in (('sw', -1, -1), ('se', 1, -1), ('nw', -1, 1), ('ne', 1, 1))
    ]
    return thin_dolan(p) + boosters


BUILDERS = {
    GeometryKind.thin_dolan: thin_dolan,
    GeometryKind.l_shape: l_shape,
    GeometryKind.horseshoe: horseshoe,
    GeometryKind.x_junction: x_junction,
}


def build_geometry(
    kind: GeometryKind | str,
    params: GeometryParams | None = None,
) -> tuple[PatternLayout, ProbeLines]:
    """
    The build_geometry function returns one of the built-in junction
    layouts together with its probe lines.

    :param kind: thin-dolan, l-shape, horseshoe or x-junction
    :param params: Dimensions; defaults when omitted
    :return: (PatternLayout, ProbeLines)
    """
    try:
        kind = GeometryKind(kind)
    except ValueError:
        known = ', '.join(k.value for k in GeometryKind)
        raise EblValidationError(f'unknown geometry {kind!r}, expected one of {known}') from None
    params = params or GeometryParams()
    probes = _probes(params)
    layout = PatternLayout(
        shapes=tuple(BUILDERS[kind](params)),
        base_dose=params.base_dose,
        bounds=(params.width, params.height),
        probes=probes,
    )
    return layout, probes
