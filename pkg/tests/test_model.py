"""Categorical and taxonomy models: worlds, events, validation and JSON loading."""

import json

import pytest

from core.errors import CapExceededError, ModelError
from core.formula import AtomRegistry
from core.model import (
    CategoricalGroup, CategoricalModel, TaxonomyModel, atom_event, enumerate_worlds,
    load_model, model_from_dict, validate_model
)

from conftest import MODELS


class TestCategorical:

    def test_world_counts(self, shapes, digits):
        assert len(enumerate_worlds(shapes)) == 9
        assert len(enumerate_worlds(digits)) == 60
        assert digits.world_count() == 60

    def test_atom_names_and_groups(self, shapes):
        assert shapes.registry.names[:3] == ('color.red', 'color.green', 'color.blue')
        assert shapes.group_of(4) == 1
        assert shapes.value_name(4) == 'square'
        assert shapes.shape == (3, 3)

    def test_worlds_lexicographic_one_atom_per_group(self, shapes):
        worlds = enumerate_worlds(shapes)
        assert worlds[0].label == 'red/circle'
        assert worlds[1].label == 'red/square'
        assert worlds[3].label == 'green/circle'
        for w in worlds:
            for group in shapes.groups:
                assert sum(w.truth[a] for a in group.atoms) == 1

    def test_truth_matrix(self, shapes):
        truth = enumerate_worlds(shapes).truth_matrix()
        assert truth.shape == (9, 6)
        assert truth.sum(axis=1).tolist() == [2] * 9

    def test_atom_event(self, shapes):
        event = atom_event(shapes, shapes.registry.lookup('blue'))
        assert sorted(w.label for w in event) == ['blue/circle', 'blue/square', 'blue/triangle']

    def test_world_cap(self, digits):
        with pytest.raises(CapExceededError):
            enumerate_worlds(digits, cap=59)

    def test_valid_partition(self, shapes):
        assert validate_model(shapes).ok

    def test_atom_outside_every_group(self):
        model = CategoricalModel(AtomRegistry(['a', 'b', 'c']), [CategoricalGroup('g', (0, 1))])
        report = validate_model(model)
        assert report.conditions() == ['not_a_partition']

    def test_overlapping_groups(self):
        model = CategoricalModel(AtomRegistry(['a', 'b', 'c']),
                                 [CategoricalGroup('g', (0, 1)), CategoricalGroup('h', (1, 2))])
        report = validate_model(model)
        assert 'not_a_partition' in report.conditions()
        assert report.issues[0].pair == ('g', 'h')


class TestTaxonomy:

    def test_worlds_skip_exhaustive_nodes(self, taxonomy):
        worlds = enumerate_worlds(taxonomy)
        assert [w.label for w in worlds] == ['animal', 'mammal', 'dog', 'cat', 'sparrow', 'eagle']

    def test_world_truth_is_ancestor_closed(self, taxonomy):
        reg = taxonomy.registry
        dog = next(w for w in enumerate_worlds(taxonomy) if w.label == 'dog')
        true_names = {reg.name(a) for a, v in enumerate(dog.truth) if v}
        assert true_names == {'animal', 'mammal', 'dog'}

    def test_non_exhaustive_root_with_two_leaves(self):
        model = TaxonomyModel.from_parents({'r': None, 'a': 'r', 'b': 'r'})
        assert len(enumerate_worlds(model)) == 3
        model = TaxonomyModel.from_parents({'r': None, 'a': 'r', 'b': 'r'}, exhaustive=('r',))
        assert len(enumerate_worlds(model)) == 2

    def test_events_nested_or_disjoint(self, taxonomy):
        assert validate_model(taxonomy).ok
        reg = taxonomy.registry
        mammal = atom_event(taxonomy, reg.lookup('mammal'))
        dog = atom_event(taxonomy, reg.lookup('dog'))
        bird = atom_event(taxonomy, reg.lookup('bird'))
        assert dog < mammal
        assert not mammal & bird

    def test_two_roots(self):
        model = TaxonomyModel.from_parents({'a': None, 'b': None})
        assert 'root' in validate_model(model).conditions()
        with pytest.raises(ModelError):
            model.root_atom

    def test_cycle(self):
        model = TaxonomyModel.from_parents({'r': None, 'a': 'b', 'b': 'a'})
        assert 'cycle' in validate_model(model).conditions()

    def test_multiple_parents_break_nesting(self):
        model = TaxonomyModel.from_parents({'r': None, 'a': 'r', 'b': 'r', 'c': ['a', 'b']})
        conditions = validate_model(model).conditions()
        assert 'tree' in conditions
        assert 'me_or_nested' in conditions

    def test_unknown_parent(self):
        model = TaxonomyModel.from_parents({'r': None, 'a': 'ghost'})
        assert 'unknown_parent' in validate_model(model).conditions()


class TestModelFiles:

    def test_bundled_models_load(self):
        counts = {'default.json': 9, 'separated.json': 9, 'cmnist.json': 60, 'taxonomy.json': 8}
        for name, count in counts.items():
            model, testbed = load_model(str(MODELS / name))
            assert len(enumerate_worlds(model)) == count
            assert isinstance(testbed, dict)

    def test_dict_round_trip(self, shapes, taxonomy):
        again = model_from_dict(shapes.to_dict())
        assert again.registry.names == shapes.registry.names
        again = model_from_dict(taxonomy.to_dict())
        assert [w.label for w in enumerate_worlds(again)] == \
            [w.label for w in enumerate_worlds(taxonomy)]

    @pytest.mark.parametrize('doc', [
        {'kind': 'categorical', 'groups': []},
        {'kind': 'categorical', 'groups': [{'name': 'g'}]},
        {'kind': 'categorical', 'groups': [{'name': 'g', 'values': ['a']},
                                           {'name': 'g', 'values': ['b']}]},
        {'kind': 'taxonomy', 'nodes': []},
        {'kind': 'taxonomy', 'nodes': [{'parent': None}]},
        {'groups': [], 'nodes': []},
        {'kind': 'graph'},
    ])
    def test_malformed_documents(self, doc):
        with pytest.raises(ModelError):
            model_from_dict(doc)

    @pytest.mark.parametrize('kind', ['categorical', 'taxonomy', None])
    def test_mixed_documents_rejected(self, kind):
        doc = {'kind': kind,
               'groups': [{'name': 'color', 'values': ['red', 'blue']}],
               'nodes': [{'name': 'root', 'parent': None}]}
        with pytest.raises(ModelError, match='Mixed'):
            model_from_dict(doc)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_model(str(tmp_path / 'nope.json'))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / 'bad.json'
        path.write_text('{"kind": ')
        with pytest.raises(ModelError, match='Invalid JSON'):
            load_model(str(path))

    def test_invalid_structure_rejected_on_load(self, tmp_path):
        path = tmp_path / 'cycle.json'
        path.write_text(json.dumps({'kind': 'taxonomy', 'nodes': [
            {'name': 'r', 'parent': None},
            {'name': 'a', 'parent': 'b'},
            {'name': 'b', 'parent': 'a'},
        ]}))
        with pytest.raises(ModelError, match='cycle'):
            load_model(str(path))
