"""Circuit nodes, structural validation and the s-expression form."""

import numpy as np
import pytest

from core.circuit import (
    STATUS_CI, STATUS_ME, STATUS_OK, AndCINode, AtomNode, NotNode, OrCINode, OrMENode,
    circuit_atoms, circuit_event, circuit_from_formula, circuit_size, circuit_to_formula,
    format_circuit, parse_circuit, validate_structure
)
from core.errors import CircuitError, UnknownAtomError
from core.formula import Atom, Or, evaluate_world, parse_formula
from core.model import enumerate_worlds


def atoms(model, *names):
    return [AtomNode(model.registry.lookup(n)) for n in names]


class TestStructure:

    def test_atoms_and_size(self, shapes):
        red, circle = atoms(shapes, 'red', 'circle')
        c = OrMENode(AndCINode(red, circle), NotNode(red))
        assert circuit_atoms(c) == (0, 3)
        assert circuit_size(c) == 6

    def test_formula_round_trip_keeps_kinds(self, shapes):
        red, green, circle = atoms(shapes, 'red', 'green', 'circle')
        c = OrCINode(OrMENode(red, green), NotNode(circle))
        f = circuit_to_formula(c)
        assert f.kind == 'CI' and f.left.kind == 'ME'
        assert circuit_from_formula(f) == c

    def test_direct_mapping_needs_pinned_disjunctions(self, shapes):
        with pytest.raises(CircuitError, match='without a kind'):
            circuit_from_formula(parse_formula('red | green', shapes.registry))
        with pytest.raises(CircuitError, match='Constants'):
            circuit_from_formula(parse_formula('red & true', shapes.registry))

    def test_event_matches_formula(self, shapes):
        f = parse_formula('(red |ME green) & ~circle', shapes.registry)
        c = circuit_from_formula(f)
        worlds = enumerate_worlds(shapes)
        expected = [evaluate_world(f, w) for w in worlds]
        assert circuit_event(c, worlds.truth_matrix()).tolist() == expected

    def test_event_rejects_foreign_atoms(self, shapes):
        truth = enumerate_worlds(shapes).truth_matrix()
        with pytest.raises(UnknownAtomError):
            circuit_event(AtomNode(17), truth)


class TestValidateStructure:

    def test_ci_across_groups_is_ok(self, shapes):
        red, circle = atoms(shapes, 'red', 'circle')
        report = validate_structure(AndCINode(red, circle), shapes)
        assert report.ok
        assert report.node_status == [('atom', STATUS_OK), ('atom', STATUS_OK), ('andCI', STATUS_OK)]

    def test_ci_within_one_group_fails(self, shapes):
        red, green = atoms(shapes, 'red', 'green')
        report = validate_structure(OrCINode(red, green), shapes)
        assert not report.ok
        assert report.node_status[-1] == ('orCI', STATUS_CI)
        assert report.issues[0].pair == ('color.red', 'color.green')

    def test_me_within_one_group_is_ok(self, shapes):
        red, green = atoms(shapes, 'red', 'green')
        assert validate_structure(OrMENode(red, green), shapes).ok

    def test_me_across_groups_fails(self, shapes):
        red, circle = atoms(shapes, 'red', 'circle')
        report = validate_structure(OrMENode(red, circle), shapes)
        assert report.node_status[-1] == ('orME', STATUS_ME)
        assert "red/circle" in report.issues[0].message

    def test_negated_me_children(self, shapes):
        # ~red and ~green share blue worlds
        red, green = atoms(shapes, 'red', 'green')
        report = validate_structure(OrMENode(NotNode(red), NotNode(green)), shapes)
        assert report.conditions() == [STATUS_ME]

    def test_statuses_in_post_order(self, shapes):
        red, green, circle = atoms(shapes, 'red', 'green', 'circle')
        c = AndCINode(OrMENode(red, green), OrCINode(circle, red))
        labels = [label for label, _ in validate_structure(c, shapes).node_status]
        assert labels == ['atom', 'atom', 'orME', 'atom', 'atom', 'orCI', 'andCI']

    def test_taxonomy_ci_never_certified(self, taxonomy):
        dog, bird = atoms(taxonomy, 'dog', 'bird')
        report = validate_structure(AndCINode(dog, bird), taxonomy)
        assert report.conditions() == [STATUS_CI]
        assert validate_structure(OrMENode(dog, bird), taxonomy).ok

    def test_taxonomy_nested_events_are_not_exclusive(self, taxonomy):
        dog, mammal = atoms(taxonomy, 'dog', 'mammal')
        assert validate_structure(OrMENode(dog, mammal), taxonomy).conditions() == [STATUS_ME]


class TestSExpression:

    def test_format(self, shapes):
        red, green, circle = atoms(shapes, 'red', 'green', 'circle')
        c = OrMENode(AndCINode(red, circle), NotNode(green))
        assert format_circuit(c, shapes.registry) == \
            '(orME (andCI color.red shape.circle) (not color.green))'

    def test_parse_round_trip(self, shapes):
        text = '(orCI (orME color.red color.green) (not (andCI color.blue shape.square)))'
        c = parse_circuit(text, shapes.registry)
        assert format_circuit(c, shapes.registry) == text

    def test_n_ary_nests_left(self, shapes):
        c = parse_circuit('(orME red green blue)', shapes.registry)
        red, green, blue = atoms(shapes, 'red', 'green', 'blue')
        assert c == OrMENode(OrMENode(red, green), blue)

    def test_bare_atom(self, shapes):
        assert parse_circuit('square', shapes.registry) == AtomNode(4)

    @pytest.mark.parametrize('text', [
        '',
        '(',
        '(xor red green)',
        '(andCI red)',
        '(not red green)',
        '(andCI red circle))',
        '(andCI red circle',
        'red green',
    ])
    def test_malformed(self, shapes, text):
        with pytest.raises(CircuitError):
            parse_circuit(text, shapes.registry)

    def test_unknown_atom(self, shapes):
        with pytest.raises(UnknownAtomError):
            parse_circuit('(andCI red hexagon)', shapes.registry)

    def test_parsed_circuit_reads_back_as_formula(self, shapes):
        c = parse_circuit('(orME red green)', shapes.registry)
        assert circuit_to_formula(c) == Or(Atom(0), Atom(1), 'ME')
        assert np.all(circuit_event(c, enumerate_worlds(shapes).truth_matrix())[:6])
