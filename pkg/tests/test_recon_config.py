import json
import math

import numpy as np
import pytest

from eit_shapes.exceptions import EitConfigError
from eit_shapes.recon.config import InitialGuess, NGon, ReconConfig, load_guess, parse_guess


def test_defaults():
    config = ReconConfig()
    assert config.alpha == 0.5
    assert config.beta == 0.05
    assert config.tol == 0.004
    assert config.refine_levels == 3
    assert config.values_known is False
    assert config.background_known is True
    assert config.solver == 'lu'


@pytest.mark.parametrize('kwargs,msg', [
    ({'alpha': 0}, 'coefficient steps must be positive'),
    ({'alpha': [0.5, -1]}, 'coefficient steps must be positive'),
    ({'beta': 0}, 'vertex step beta must be positive'),
    ({'delta1_factor': 2, 'delta2_factor': 1}, '0 < delta1_factor < delta2_factor'),
    ({'tol': 0}, 'tol must be positive'),
    ({'refine_levels': 0}, 'refine_levels and snapshot_every at least 1'),
    ({'sigma_min': 0}, '0 < sigma_min < sigma_max'),
    ({'min_clearance': -0.1}, 'min_clearance must be non-negative'),
    ({'solver': 'gmres'}, "solver must be one of \\('lu', 'cg'\\)"),
    ({'threads': 0}, 'threads must be at least 1'),
])
def test_invalid(kwargs, msg):
    with pytest.raises(EitConfigError, match=msg):
        ReconConfig(**kwargs)


def test_from_file(tmpworkdir):
    tmpworkdir.join('config.json').write(json.dumps({'beta': 0.1, 'max_iter': 50, 'alpha': [0.1, 0.2]}))
    config = ReconConfig.from_file('config.json', max_iter=20, tol=None)
    assert config.beta == 0.1
    assert config.max_iter == 20
    assert config.tol == 0.004
    assert config.alpha == (0.1, 0.2)


def test_from_file_errors(tmpworkdir):
    with pytest.raises(EitConfigError, match='unable to read config file'):
        ReconConfig.from_file('missing.json')
    tmpworkdir.join('list.json').write('[1, 2]')
    with pytest.raises(EitConfigError, match='must contain a JSON object'):
        ReconConfig.from_file('list.json')
    with pytest.raises(EitConfigError, match='unknown config fields: gamma, step'):
        ReconConfig.from_file(step=1, gamma=2)


def test_replace_and_hash():
    config = ReconConfig()
    assert config.config_hash() == ReconConfig().config_hash()
    changed = config.replace(values_known=True)
    assert changed.values_known is True
    assert config.values_known is False
    assert changed.config_hash() != config.config_hash()
    assert ReconConfig(alpha=[1, 2]).as_dict()['alpha'] == [1.0, 2.0]


def test_alpha_for():
    assert ReconConfig(alpha=0.3).alpha_for(3) == pytest.approx([0.3, 0.3, 0.3])
    assert np.array_equal(ReconConfig(alpha=[0.1, 0.2]).alpha_for(2), [0.1, 0.2])
    with pytest.raises(EitConfigError, match='2 coefficient steps given for 3 regions'):
        ReconConfig(alpha=[0.1, 0.2]).alpha_for(3)


def test_str():
    s = str(ReconConfig(beta=0.2))
    assert s.startswith('ReconConfig:\n')
    assert '  beta: 0.2\n' in s


def test_ngon_side_length():
    assert NGon((0.5, 0.5), 0.25, 4, 10).side_length == pytest.approx(0.25 * math.sqrt(2))
    guess = InitialGuess((NGon((0.5, 0.5), 0.1, 6, 1), NGon((0.2, 0.2), 0.05, 3, 1)))
    assert guess.side_length == pytest.approx(0.1)
    with pytest.raises(EitConfigError, match='no polygons'):
        InitialGuess(()).side_length


@pytest.mark.parametrize('text,expected', [
    ('ngon:0.5,0.5,0.25,14,10', InitialGuess((NGon((0.5, 0.5), 0.25, 14, 10.0),))),
    ('0.5, 0.5, 0.25, 14, 10', InitialGuess((NGon((0.5, 0.5), 0.25, 14, 10.0),))),
    (
        'ngon:0.3,0.6,0.1,16,0.5;0.7,0.6,0.1,16,.5;bg:2',
        InitialGuess((NGon((0.3, 0.6), 0.1, 16, 0.5), NGon((0.7, 0.6), 0.1, 16, 0.5)), 2.0),
    ),
    ('ngon:5e-1,0.5,0.2,8,1e1;', InitialGuess((NGon((0.5, 0.5), 0.2, 8, 10.0),))),
])
def test_parse_guess(text, expected):
    assert parse_guess(text) == expected


@pytest.mark.parametrize('text,msg', [
    ('circle:0.5,0.5,0.2', 'unable to parse guess item "circle:0.5,0.5,0.2"'),
    ('bg:2', 'defines no polygons'),
    ('ngon:0.5,0.5,0.2,2,1', 'at least 3 sides'),
    ('ngon:0.5,0.5,0,5,1', 'positive radius'),
])
def test_parse_guess_errors(text, msg):
    with pytest.raises(EitConfigError, match=msg):
        parse_guess(text)


def test_with_values():
    guess = parse_guess('ngon:0.3,0.6,0.1,16,0.5;0.7,0.6,0.1,16,0.5')
    assert [g.value for g in guess.with_values([1, 2]).ngons] == [1.0, 2.0]
    with pytest.raises(EitConfigError, match='1 values given for 2 polygons'):
        guess.with_values([1])


def test_load_guess(tmpworkdir):
    guess = parse_guess('ngon:0.3,0.6,0.1,16,0.5;bg:1.5')
    tmpworkdir.join('guess.json').write(json.dumps(guess.to_json()))
    assert load_guess('guess.json') == guess
    assert load_guess('ngon:0.3,0.6,0.1,16,0.5;bg:1.5') == guess
    tmpworkdir.join('bad.json').write('{"ngons": [{"center": [0.5]}]}')
    with pytest.raises(EitConfigError, match='invalid guess JSON'):
        load_guess('bad.json')
    with pytest.raises(EitConfigError, match='unable to read guess file'):
        load_guess('missing.json')
