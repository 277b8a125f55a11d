from eit_shapes.figures import RECON_COLOR, SVG, TRUE_COLOR, convergence_svg, partition_svg
from eit_shapes.measurements import ElectrodeLayout
from eit_shapes.meshing import coarse_mesh
from eit_shapes.recon import InitialGuess, NGon, initial_guess
from eit_shapes.recon.trace import IterationRecord, ReconTrace


def test_svg_text_escaped():
    svg = SVG(100, 50)
    svg.text(10, 20, 'J < 1e-3 & β > 0')
    out = svg.render()
    assert out.startswith('<?xml version="1.0" standalone="no"?>\n<svg width="100" height="50"')
    assert 'J &lt; 1e-3 &amp; β &gt; 0</text>' in out
    assert out.endswith('</svg>\n')


def test_partition_svg(pentagon):
    recon = initial_guess(InitialGuess((NGon((0.5, 0.5), 0.2, 8, 8.0),)))
    out = partition_svg(pentagon, recon, ElectrodeLayout(8))
    assert out.count('<polyline') == 8
    assert out.count('stroke:{}'.format(TRUE_COLOR)) == 1
    assert 'fill:{};fill-opacity:0.25;stroke:{}'.format(RECON_COLOR, RECON_COLOR) in out
    assert 'true σ=[1, 10]   recon σ=[1, 8]' in out
    # the square is drawn in pixel coordinates with y flipped
    assert '<polygon points="20.000,420.000 420.000,420.000 420.000,20.000 20.000,20.000"' in out
    assert partition_svg(pentagon, recon, ElectrodeLayout(8)) == out


def test_partition_svg_mesh(pentagon):
    mesh = coarse_mesh(pentagon.partition, 4)
    out = partition_svg(pentagon, mesh=mesh)
    assert out.count('<polyline') == len(mesh.edges())
    assert 'recon' not in out


def test_convergence_svg():
    trace = ReconTrace(status='converged')
    for i, (J, theta) in enumerate([(1e-2, 0.5), (1e-3, 0.05), (1e-5, 0.003)]):
        trace.records.append(IterationRecord(i, J, [1.0, 10.0], [14], theta))
    out = convergence_svg(trace)
    assert out.count('<polyline') == 2
    assert 'stroke-dasharray:4,3' in out
    assert '>1e0</text>' in out
    assert '>1e-5</text>' in out
    assert 'converged</text>' in out


def test_convergence_svg_empty():
    out = convergence_svg(ReconTrace(status='failed'))
    assert '<polyline' not in out
    assert 'failed</text>' in out
