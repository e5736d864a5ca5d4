"""Knowledge compilation: equivalence and structural validity of compiled circuits."""

import pytest

from core.circuit import AndCINode, AtomNode, NotNode, OrMENode, format_circuit, validate_structure
from core.compiler import (
    check_equivalence, compile_categorical, compile_formula, compile_taxonomy, refinement_circuit
)
from core.errors import CapExceededError, ModelError, UnsatisfiableFormulaError
from core.formula import parse_formula, random_query
from core.model import CategoricalModel


class TestCategorical:

    def test_single_world(self, shapes):
        f = parse_formula('red & circle', shapes.registry)
        c = compile_categorical(f, shapes)
        assert c == AndCINode(AtomNode(0), AtomNode(3))

    def test_terms_in_world_order(self, shapes):
        f = parse_formula('(red & circle) | square', shapes.registry)
        c = compile_categorical(f, shapes)
        assert format_circuit(c, shapes.registry) == (
            '(orME (orME (orME (andCI color.red shape.circle) (andCI color.red shape.square)) '
            '(andCI color.green shape.square)) (andCI color.blue shape.square))')

    def test_result_flags(self, shapes):
        result = compile_formula(parse_formula('~red', shapes.registry), shapes)
        assert result.equivalent and result.valid
        assert (result.n_terms, result.n_worlds) == (6, 9)
        assert not result.degenerate

    def test_tautology_is_degenerate(self, shapes):
        result = compile_formula(parse_formula('red | ~red', shapes.registry), shapes)
        assert result.degenerate
        assert result.n_terms == result.n_worlds == 9

    def test_unsatisfiable(self, shapes):
        with pytest.raises(UnsatisfiableFormulaError):
            compile_formula(parse_formula('red & green', shapes.registry), shapes)

    def test_fdnf_cap(self, digits):
        f = parse_formula('digit.3', digits.registry)
        with pytest.raises(CapExceededError):
            compile_categorical(f, digits, fdnf_cap=15)
        result = compile_formula(f, digits)
        assert result.n_terms == 6

    def test_wrong_family(self, shapes, taxonomy):
        with pytest.raises(ModelError):
            compile_taxonomy(parse_formula('red', shapes.registry), shapes)
        with pytest.raises(ModelError):
            compile_categorical(parse_formula('dog', taxonomy.registry), taxonomy)

    def test_random_formulas_compile_valid(self, shapes):
        for seed in range(60):
            f = random_query(shapes, 1 + seed % 4, seed=seed)
            result = compile_formula(f, shapes)
            assert result.equivalent, seed
            assert result.valid, seed


class TestTaxonomy:

    def test_leaf_refinement_is_the_atom(self, taxonomy):
        dog = taxonomy.registry.lookup('dog')
        assert refinement_circuit(taxonomy, dog) == AtomNode(dog)

    def test_internal_refinement(self, taxonomy):
        reg = taxonomy.registry
        c = refinement_circuit(taxonomy, reg.lookup('mammal'))
        assert format_circuit(c, reg) == '(not (orME (not mammal) (orME dog cat)))'

    def test_root_refinement_drops_negated_root(self, taxonomy):
        reg = taxonomy.registry
        c = refinement_circuit(taxonomy, taxonomy.root_atom)
        assert format_circuit(c, reg) == '(not (orME mammal bird))'

    @pytest.mark.parametrize('text,n_terms', [
        ('mammal', 3),
        ('bird', 2),
        ('~dog', 5),
        ('mammal & ~cat', 2),
        ('dog | bird', 3),
    ])
    def test_compiled_circuits_are_valid(self, taxonomy, text, n_terms):
        f = parse_formula(text, taxonomy.registry)
        result = compile_formula(f, taxonomy)
        assert result.equivalent and result.valid
        assert result.n_terms == n_terms
        labels = {label for label, _ in validate_structure(result.circuit, taxonomy).node_status}
        assert labels <= {'atom', 'not', 'orME'}

    def test_random_taxonomy_formulas(self, taxonomy):
        for seed in range(40):
            f = random_query(taxonomy, 1 + seed % 3, seed=seed)
            result = compile_formula(f, taxonomy)
            assert result.equivalent and result.valid, seed


class TestEquivalence:

    def test_detects_mismatch(self, shapes):
        f = parse_formula('red', shapes.registry)
        assert check_equivalence(f, AtomNode(0), shapes)
        assert not check_equivalence(f, NotNode(AtomNode(0)), shapes)

    def test_single_group_model(self):
        model = CategoricalModel.from_values({'only': ['a', 'b', 'c']})
        result = compile_formula(parse_formula('a | b', model.registry), model)
        assert result.circuit == OrMENode(AtomNode(0), AtomNode(1))
        assert result.valid
