"""Shared fixtures: small models and their testbeds."""

from pathlib import Path

import pytest

from core.model import CategoricalModel, TaxonomyModel, load_model
from testbeds.discrete import DiscreteDiffusion
from testbeds.gmm import GMMDiffusion

ROOT = Path(__file__).resolve().parent.parent
MODELS = ROOT / 'models'


@pytest.fixture
def shapes():
    """color x shape, 3 x 3."""
    return CategoricalModel.from_values({
        'color': ['red', 'green', 'blue'],
        'shape': ['circle', 'square', 'triangle'],
    }, name='shapes')


@pytest.fixture
def digits():
    """digit x color, 10 x 6."""
    return CategoricalModel.from_values({
        'digit': [str(d) for d in range(10)],
        'color': ['red', 'green', 'blue', 'yellow', 'purple', 'white'],
    }, name='digits')


@pytest.fixture
def small():
    """Two binary groups, small enough for exhaustive checks everywhere."""
    return CategoricalModel.from_values({'a': ['x', 'y'], 'b': ['u', 'v']}, name='small')


@pytest.fixture
def taxonomy():
    """animal > {mammal > {dog, cat}, bird (exhaustive) > {sparrow, eagle}}."""
    return TaxonomyModel.from_parents({
        'animal': None,
        'mammal': 'animal',
        'bird': 'animal',
        'dog': 'mammal',
        'cat': 'mammal',
        'sparrow': 'bird',
        'eagle': 'bird',
    }, exhaustive=('bird',), name='animals')


@pytest.fixture
def gmm(shapes):
    return GMMDiffusion(shapes, {'spacing': 1.0, 'variance': 0.25})


@pytest.fixture
def separated_gmm(shapes):
    return GMMDiffusion(shapes, {'spacing': 4.0, 'variance': 0.25})


@pytest.fixture
def taxonomy_gmm(taxonomy):
    return GMMDiffusion(taxonomy, {'spacing': 2.0, 'variance': 0.25})


@pytest.fixture
def discrete(shapes):
    return DiscreteDiffusion(shapes, {'steps': 4, 'flip_rate': 0.2, 'weights': 'random', 'seed': 3})


@pytest.fixture
def taxonomy_discrete(taxonomy):
    return DiscreteDiffusion(taxonomy, {'steps': 3, 'flip_rate': 0.25})


@pytest.fixture
def model_file():
    return str(MODELS / 'default.json')


@pytest.fixture
def bundled_model():
    model, testbed = load_model(str(MODELS / 'default.json'))
    return model, testbed
