"""
SVG figures: partition overlays and convergence curves. Output is plain text with fixed
precision so reruns reproduce files byte for byte.
"""
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from .fem import Conductivity
from .geometry import Partition
from .measurements import ElectrodeLayout, electrode_segments
from .meshing import TriMesh
from .recon.trace import ReconTrace

TRUE_COLOR = '#1f4fd8'
RECON_COLOR = '#d62728'
ELECTRODE_COLORS = ('#555555', '#aaaaaa')
MESH_COLOR = '#cccccc'
SIZE = 400.0
MARGIN = 20.0

PREAMBLE = """\
<?xml version="1.0" standalone="no"?>
<svg width="{width:.0f}" height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}" version="1.1" \
xmlns="http://www.w3.org/2000/svg">
<rect x="0" y="0" width="{width:.0f}" height="{height:.0f}" style="fill:#ffffff"/>
"""
POSTAMBLE = '</svg>\n'

Points = Sequence[Tuple[float, float]]


def _fmt_points(points: Points) -> str:
    return ' '.join('{:.3f},{:.3f}'.format(x, y) for x, y in points)


class SVG:
    """Drawing commands in pixel coordinates, y pointing down."""

    def __init__(self, width: float, height: float):
        self.width = width
        self.height = height
        self.commands: List[str] = []

    def line(self, points: Points, color: str = '#000000', width: float = 1.0, dash: bool = False) -> None:
        self.commands.append('<polyline points="{}" style="fill:none;stroke:{};stroke-width:{:.2f}{}"/>'.format(
            _fmt_points(points), color, width, ';stroke-dasharray:4,3' if dash else ''))

    def polygon(self, points: Points, color: str = '#000000', width: float = 1.0,
                fill: Optional[str] = None, opacity: float = 0.25) -> None:
        fill_style = 'fill:{};fill-opacity:{:.2f}'.format(fill, opacity) if fill else 'fill:none'
        self.commands.append('<polygon points="{}" style="{};stroke:{};stroke-width:{:.2f}"/>'.format(
            _fmt_points(points), fill_style, color, width))

    def text(self, x: float, y: float, text: str, color: str = '#333333', size: int = 11,
             anchor: str = 'start') -> None:
        text = text.replace('&', '&amp;').replace('<', '&lt;').replace('>', '&gt;')
        self.commands.append(
            '<text x="{:.3f}" y="{:.3f}" fill="{}" font-size="{}" font-family="monospace" '
            'text-anchor="{}">{}</text>'.format(x, y, color, size, anchor, text)
        )

    def render(self) -> str:
        return PREAMBLE.format(width=self.width, height=self.height) + ''.join(c + '\n' for c in self.commands) \
            + POSTAMBLE


def _to_px(xy: npt.ArrayLike) -> List[Tuple[float, float]]:
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    return [(MARGIN + SIZE * x, MARGIN + SIZE * (1 - y)) for x, y in xy]


def _draw_partition(svg: SVG, part: Partition, color: str, width: float, fill: Optional[str] = None) -> None:
    for p in part.inclusions:
        svg.polygon(_to_px(p.coords), color=color, width=width, fill=fill)


def partition_svg(true: Optional[Conductivity], reconstructed: Optional[Conductivity] = None,
                  layout: Optional[ElectrodeLayout] = None, mesh: Optional[TriMesh] = None) -> str:
    """
    The unit square with electrodes in alternating grays, the true partition outlined in blue
    and the reconstruction filled in red. Either conductivity may be omitted.
    """
    svg = SVG(SIZE + 2 * MARGIN, SIZE + 2 * MARGIN + 20)
    if mesh is not None:
        for a, b in mesh.edges():
            svg.line(_to_px(mesh.nodes[[a, b]]), color=MESH_COLOR, width=0.4)
    svg.polygon(_to_px([(0, 0), (1, 0), (1, 1), (0, 1)]), width=1.0)
    if layout is not None:
        for i, seg in enumerate(electrode_segments(layout)):
            svg.line(_to_px(seg), color=ELECTRODE_COLORS[i % 2], width=5.0)
    if reconstructed is not None:
        _draw_partition(svg, reconstructed.partition, RECON_COLOR, 1.5, fill=RECON_COLOR)
    if true is not None:
        _draw_partition(svg, true.partition, TRUE_COLOR, 2.0)

    legend = []
    if true is not None:
        legend.append('true σ=[{}]'.format(', '.join('{:.3g}'.format(v) for v in true.region_values)))
    if reconstructed is not None:
        legend.append('recon σ=[{}]'.format(', '.join('{:.3g}'.format(v) for v in reconstructed.region_values)))
    svg.text(MARGIN, SIZE + 2 * MARGIN + 8, '   '.join(legend))
    return svg.render()


def _polyline(values: Sequence[float], x0: float, y0: float, w: float, h: float,
              lo: float, hi: float) -> List[Tuple[float, float]]:
    n = max(len(values) - 1, 1)
    span = hi - lo or 1.0
    return [(x0 + w * i / n, y0 + h * (1 - (v - lo) / span)) for i, v in enumerate(values)]


def convergence_svg(trace: ReconTrace) -> str:
    """log10 J (blue) and log10 max|θ| (red, dashed) against the iteration number."""
    width, height = 600.0, 320.0
    x0, y0, w, h = 60.0, 20.0, width - 80.0, height - 60.0
    svg = SVG(width, height)
    svg.polygon([(x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)], color='#999999', width=0.8)

    floor = 1e-300
    log_j = [math.log10(max(r.J, floor)) for r in trace.records]
    log_t = [math.log10(max(r.max_theta, floor)) for r in trace.records]
    if log_j:
        series = log_j + log_t
        lo, hi = math.floor(min(series)), math.ceil(max(series))
        svg.line(_polyline(log_j, x0, y0, w, h, lo, hi), color=TRUE_COLOR, width=1.5)
        svg.line(_polyline(log_t, x0, y0, w, h, lo, hi), color=RECON_COLOR, width=1.2, dash=True)
        svg.text(x0 - 6, y0 + 4, '1e{}'.format(hi), anchor='end')
        svg.text(x0 - 6, y0 + h, '1e{}'.format(lo), anchor='end')
        svg.text(x0 + w, y0 + h + 16, str(trace.records[-1].iteration), anchor='end')
    svg.text(x0, y0 + h + 16, '0')
    svg.text(x0 + w / 2, height - 8, 'iteration   J (solid)   max|θ| (dashed)   {}'.format(trace.status),
             anchor='middle')
    return svg.render()
