"""
Pattern layouts: dosed polygons, probe lines through the bridge, and the
plain-text layout format.

Layout file grammar (one statement per line, ``#`` starts a comment)::

    base_dose <float>
    bounds <width> <height>
    probes                     (optional block)
      vertical <x0> <y0> <x1> <y1>
      horizontal <x0> <y0> <x1> <y1>
      bridge_extent <float>
      bridge_width <float>
    end
    shape <name>               (one block per polygon)
      tag <word>
      dose_factor <float>
      vertex <x> <y>           (three or more)
    end
"""
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

import shapely
from shapely.geometry import LinearRing, Point, Polygon

from src.services.errors import EblValidationError, FormatError, GeometryError

logger = logging.getLogger(__name__)

Vertex = tuple[float, float]
Segment = tuple[Vertex, Vertex]


@dataclass(frozen=True)
class Shape:
    name: str
    polygon: tuple[Vertex, ...]
    dose_factor: float = 1.0
    tag: str = 'base'

    @property
    def geometry(self) -> Polygon:
        return Polygon(self.polygon)

    @property
    def area(self) -> float:
        return float(self.geometry.area)

    def translated(self, dx: float, dy: float) -> 'Shape':
        return replace(self, polygon=tuple((x + dx, y + dy) for x, y in self.polygon))

    def reversed(self) -> 'Shape':
        return replace(self, polygon=tuple(reversed(self.polygon)))


@dataclass(frozen=True)
class ProbeLines:
    vertical: Segment
    horizontal: Segment
    bridge_extent: float
    bridge_width: float

    def __post_init__(self):
        if self.bridge_extent <= 0 or self.bridge_width <= 0:
            raise EblValidationError('bridge extent and width must be positive')
        center = self.centroid
        for name in ('vertical', 'horizontal'):
            (x0, y0), (x1, y1) = getattr(self, name)
            if (x0, y0) == (x1, y1):
                raise EblValidationError(f'{name} probe has zero length')
            cross = (x1 - x0) * (center[1] - y0) - (y1 - y0) * (center[0] - x0)
            if abs(cross) > 1e-6 * math.hypot(x1 - x0, y1 - y0) ** 2:
                raise EblValidationError(f'{name} probe misses the bridge centroid')

    @property
    def centroid(self) -> Vertex:
        (x0, y0), (x1, y1) = self.vertical
        return ((x0 + x1) / 2, (y0 + y1) / 2)

    @property
    def bridge_section(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the unexposed bridge rectangle."""
        cx, cy = self.centroid
        return (cx - self.bridge_width / 2, cy - self.bridge_extent / 2,
                cx + self.bridge_width / 2, cy + self.bridge_extent / 2)

    def translated(self, dx: float, dy: float) -> 'ProbeLines':
        def move(segment):
            return tuple((x + dx, y + dy) for x, y in segment)
        return replace(self, vertical=move(self.vertical),
                       horizontal=move(self.horizontal))


@dataclass(frozen=True)
class PatternLayout:
    """
    Polygons with per-shape dose factors over a rectangular field.

    :param shapes: Shapes, drawn in order (overlaps add up)
    :param base_dose: Nominal dose in uC/cm^2
    :param bounds: (width, height) of the field in nm, origin at (0, 0)
    :param probes: Optional probe lines through the bridge
    """
    shapes: tuple[Shape, ...]
    base_dose: float
    bounds: tuple[float, float]
    probes: Optional[ProbeLines] = field(default=None)

    def __post_init__(self):
        validate_layout(self)

    def shape(self, name: str) -> Shape:
        for item in self.shapes:
            if item.name == name:
                return item
        raise KeyError(name)

    @property
    def factors(self) -> dict[str, float]:
        return {s.name: s.dose_factor for s in self.shapes}

    def with_base_dose(self, base_dose: float) -> 'PatternLayout':
        return replace(self, base_dose=base_dose)

    def with_factors(self, factors: dict[str, float]) -> 'PatternLayout':
        unknown = set(factors) - {s.name for s in self.shapes}
        if unknown:
            raise EblValidationError(f'unknown shape(s): {", ".join(sorted(unknown))}')
        shapes = tuple(
            replace(s, dose_factor=float(factors.get(s.name, s.dose_factor)))
            for s in self.shapes
        )
        return replace(self, shapes=shapes)

    def translated(self, dx: float, dy: float) -> 'PatternLayout':
        return replace(
            self,
            shapes=tuple(s.translated(dx, dy) for s in self.shapes),
            probes=self.probes.translated(dx, dy) if self.probes else None,
        )


def validate_layout(layout: PatternLayout) -> None:
    """
    The validate_layout function checks the layout invariants and raises a
    GeometryError naming the first offending shape.

    :param layout: Layout to check
    :return: None
    """
    if not layout.base_dose > 0:
        raise EblValidationError(f'base_dose must be positive, got {layout.base_dose}')
    width, height = layout.bounds
    if not (width > 0 and height > 0):
        raise EblValidationError('bounds must be positive')
    seen = set()
    for shape in layout.shapes:
        if shape.name in seen:
            raise GeometryError(shape.name, 'duplicate shape name')
        seen.add(shape.name)
        if not shape.dose_factor > 0:
            raise GeometryError(shape.name, f'dose factor must be positive, got {shape.dose_factor}')
        if len(set(shape.polygon)) < 3:
            raise GeometryError(shape.name, 'polygon needs at least 3 distinct vertices')
        if not all(math.isfinite(c) for v in shape.polygon for c in v):
            raise GeometryError(shape.name, 'non-finite vertex')
        if not LinearRing(shape.polygon).is_simple:
            raise GeometryError(shape.name, 'polygon is self-intersecting')
        polygon = shape.geometry
        if not polygon.is_valid or polygon.area <= 0:
            raise GeometryError(shape.name, shapely.is_valid_reason(polygon))
        xmin, ymin, xmax, ymax = polygon.bounds
        if xmin < 0 or ymin < 0 or xmax > width or ymax > height:
            raise GeometryError(shape.name, 'polygon leaves the layout bounds')


def exposed_area_within(layout: PatternLayout, center: Vertex, radius: float) -> float:
    """
    The exposed_area_within function returns the exposed area (nm^2) of the
    layout inside a disc; overlapping shapes count once.

    :param layout: Layout
    :param center: Disc centre in nm
    :param radius: Disc radius in nm
    :return: Area in nm^2
    """
    disc = Point(center).buffer(radius, quad_segs=256)
    exposed = shapely.union_all([s.geometry for s in layout.shapes])
    return float(exposed.intersection(disc).area)


def _fmt(value: float) -> str:
    return repr(float(value))


def write_layout(layout: PatternLayout) -> str:
    """
    The write_layout function renders a layout in the canonical text form.

    :param layout: Layout to write
    :return: File contents
    """
    lines = [f'base_dose {_fmt(layout.base_dose)}',
             f'bounds {_fmt(layout.bounds[0])} {_fmt(layout.bounds[1])}']
    if layout.probes is not None:
        probes = layout.probes
        lines.append('probes')
        for name in ('vertical', 'horizontal'):
            (x0, y0), (x1, y1) = getattr(probes, name)
            lines.append(f'  {name} {_fmt(x0)} {_fmt(y0)} {_fmt(x1)} {_fmt(y1)}')
        lines.append(f'  bridge_extent {_fmt(probes.bridge_extent)}')
        lines.append(f'  bridge_width {_fmt(probes.bridge_width)}')
        lines.append('end')
    for shape in layout.shapes:
        lines.append(f'shape {shape.name}')
        lines.append(f'  tag {shape.tag}')
        lines.append(f'  dose_factor {_fmt(shape.dose_factor)}')
        for x, y in shape.polygon:
            lines.append(f'  vertex {_fmt(x)} {_fmt(y)}')
        lines.append('end')
    return '\n'.join(lines) + '\n'


class _Tokens:
    """Whitespace-split tokens of one line with their 1-based columns."""

    def __init__(self, number: int, text: str):
        self.number = number
        self.items = []
        column = 0
        for word in text.split():
            column = text.index(word, column)
            self.items.append((word, column + 1))
            column += len(word)

    @property
    def keyword(self) -> str:
        return self.items[0][0]

    def error(self, message: str, index: int = 0) -> FormatError:
        column = self.items[min(index, len(self.items) - 1)][1]
        return FormatError(message, self.number, column)

    def floats(self, count: int) -> list[float]:
        if len(self.items) != count + 1:
            raise self.error(f"'{self.keyword}' expects {count} value(s)",
                             min(len(self.items) - 1, count + 1))
        values = []
        for index in range(1, count + 1):
            word = self.items[index][0]
            try:
                value = float(word)
            except ValueError:
                raise self.error(f'not a number: {word!r}', index) from None
            if not math.isfinite(value):
                raise self.error(f'not a finite number: {word!r}', index)
            values.append(value)
        return values

    def word(self) -> str:
        if len(self.items) != 2:
            raise self.error(f"'{self.keyword}' expects one word", 1 if len(self.items) > 1 else 0)
        return self.items[1][0]


def _statements(text: str) -> Iterable[_Tokens]:
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0]
        if line.strip():
            yield _Tokens(number, line)


def parse_layout(text: str) -> PatternLayout:
    """
    The parse_layout function reads the text layout format.

    :param text: File contents
    :return: A validated PatternLayout
    """
    base_dose = bounds = probes = None
    shapes = []
    block = None
    current: dict = {}
    last = 0
    for tokens in _statements(text):
        last = tokens.number
        key = tokens.keyword
        if block is None:
            if key == 'base_dose':
                base_dose = tokens.floats(1)[0]
            elif key == 'bounds':
                bounds = tuple(tokens.floats(2))
            elif key == 'probes':
                if len(tokens.items) != 1:
                    raise tokens.error("'probes' takes no values", 1)
                block, current = 'probes', {'line': tokens}
            elif key == 'shape':
                block = 'shape'
                current = {'name': tokens.word(), 'tag': 'base',
                           'dose_factor': 1.0, 'vertices': [], 'line': tokens}
            else:
                raise tokens.error(f'unknown statement {key!r}')
        elif key == 'end':
            if len(tokens.items) != 1:
                raise tokens.error("'end' takes no values", 1)
            if block == 'probes':
                probes = _build_probes(current)
            else:
                shapes.append(Shape(
                    name=current['name'],
                    polygon=tuple(current['vertices']),
                    dose_factor=current['dose_factor'],
                    tag=current['tag'],
                ))
            block = None
        elif block == 'probes':
            if key in ('vertical', 'horizontal'):
                x0, y0, x1, y1 = tokens.floats(4)
                current[key] = ((x0, y0), (x1, y1))
            elif key in ('bridge_extent', 'bridge_width'):
                current[key] = tokens.floats(1)[0]
            else:
                raise tokens.error(f'unknown probes statement {key!r}')
        else:
            if key == 'tag':
                current['tag'] = tokens.word()
            elif key == 'dose_factor':
                current['dose_factor'] = tokens.floats(1)[0]
            elif key == 'vertex':
                current['vertices'].append(tuple(tokens.floats(2)))
            else:
                raise tokens.error(f'unknown shape statement {key!r}')
    if block is not None:
        raise FormatError(f"unterminated '{block}' block", last + 1, 1)
    if base_dose is None:
        raise FormatError("missing 'base_dose'", last + 1, 1)
    if bounds is None:
        raise FormatError("missing 'bounds'", last + 1, 1)
    return PatternLayout(tuple(shapes), base_dose, bounds, probes)


def _build_probes(current: dict) -> ProbeLines:
    missing = [k for k in ('vertical', 'horizontal', 'bridge_extent', 'bridge_width')
               if k not in current]
    if missing:
        raise current['line'].error(f'probes block misses {", ".join(missing)}')
    return ProbeLines(current['vertical'], current['horizontal'],
                      current['bridge_extent'], current['bridge_width'])


def read_layout(path: str | Path) -> PatternLayout:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as error:
        raise FormatError(f'cannot read layout {path}: {error.strerror}') from error
    return parse_layout(text)


def save_layout(layout: PatternLayout, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(write_layout(layout), encoding='utf-8')
    logger.info('wrote layout with %d shapes to %s', len(layout.shapes), path)
    return path
