"""Random-formula oracle campaigns and assignment-set queries."""

import numpy as np
import pytest

from conftest import MODELS
from core.calculus import EvalSettings, eval_circuit, eval_transition
from core.circuit import AndCINode, AtomNode, OrMENode
from core.compiler import compile_formula
from core.config import DEFAULTS
from core.formula import Atom, conjoin, disjoin
from core.model import enumerate_worlds, load_model
from core.verification import (
    CampaignSummary, compilation_campaign, continuous_campaign, discrete_campaign
)
from testbeds.discrete import DiscreteDiffusion

TOLERANCES = DEFAULTS['verify']['tolerances']


class TestCampaignSummary:

    def test_keeps_the_maximum(self):
        summary = CampaignSummary('demo')
        for value in (1e-12, 3e-11, 2e-11):
            summary.update('posterior', value)
        assert summary.max_deviation == {'posterior': 3e-11}

    def test_check_tolerances(self):
        summary = CampaignSummary('demo')
        summary.update('posterior', 1e-6)
        summary.update('score', 1e-12)
        summary.check_tolerances({'posterior': 1e-10, 'score': 1e-8, 'transition': 1e-9})
        assert not summary.ok
        assert len(summary.failures) == 1
        assert 'posterior' in summary.failures[0]

    def test_lines(self):
        summary = CampaignSummary('demo', n_formulas=2, n_probes=10, skipped=3)
        summary.update('score', 0.5)
        text = '\n'.join(summary.lines())
        assert text.startswith('[demo] 2 formulas, 10 probes')
        assert 'max score dev = 5.000e-01' in text
        assert '3 probe(s) skipped' in text
        assert summary.to_dict()['skipped'] == 3


class TestCampaigns:

    def test_compilation(self, shapes, taxonomy):
        for model in (shapes, taxonomy):
            summary = compilation_campaign(model, n_formulas=40, seed=1)
            assert summary.ok, summary.failures
            assert summary.n_formulas == 40

    def test_continuous(self, gmm):
        summary = continuous_campaign(gmm, n_formulas=6, n_probes=10, seed=2)
        summary.check_tolerances(TOLERANCES['continuous'])
        assert summary.ok, summary.lines()
        assert set(summary.max_deviation) == {'posterior', 'score', 'coefficient', 'finite-difference'}
        assert summary.n_probes == 60

    def test_discrete(self, discrete):
        summary = discrete_campaign(discrete, n_formulas=6, seed=2)
        summary.check_tolerances(TOLERANCES['discrete'])
        assert summary.ok, summary.lines()
        assert summary.n_probes == 6 * discrete.steps * discrete.n_states

    def test_discrete_taxonomy(self, taxonomy_discrete):
        summary = discrete_campaign(taxonomy_discrete, n_formulas=10, seed=0)
        summary.check_tolerances(TOLERANCES['discrete'])
        assert summary.ok, summary.lines()

    def test_discrete_without_noise_skips_zero_posteriors(self, small):
        dd = DiscreteDiffusion(small, {'flip_rate': 0.0, 'steps': 2})
        summary = discrete_campaign(dd, n_formulas=5, seed=3)
        summary.check_tolerances(TOLERANCES['discrete'])
        assert summary.ok, summary.lines()
        assert summary.skipped > 0
        assert summary.n_probes + summary.skipped == summary.n_formulas * 2 * 4

    def test_seeded(self, shapes):
        a = compilation_campaign(shapes, n_formulas=10, seed=5)
        b = compilation_campaign(shapes, n_formulas=10, seed=5)
        assert (a.n_formulas, a.failures) == (b.n_formulas, b.failures)


@pytest.mark.slow
class TestFullCampaigns:

    def test_default_continuous(self, gmm):
        summary = continuous_campaign(gmm, n_formulas=500, n_probes=100)
        summary.check_tolerances(TOLERANCES['continuous'])
        assert summary.ok, summary.lines()

    def test_default_discrete(self, discrete):
        summary = discrete_campaign(discrete, n_formulas=200)
        summary.check_tolerances(TOLERANCES['discrete'])
        assert summary.ok, summary.lines()

    @pytest.mark.parametrize('name', ['default', 'cmnist', 'taxonomy'])
    def test_bundled_model_compilation(self, name):
        model, _ = load_model(str(MODELS / f'{name}.json'))
        summary = compilation_campaign(model, n_formulas=500, seed=11)
        assert summary.ok, summary.lines()
        assert summary.n_formulas == 500

    def test_bundled_taxonomy_is_deep(self):
        model, _ = load_model(str(MODELS / 'taxonomy.json'))

        def depth(atom):
            return max((1 + depth(k) for k in model.children[atom]), default=0)

        assert depth(model.root_atom) >= 3


def assignment_query(model, worlds):
    """phi_A: the disjunction of the full assignments in A."""
    return disjoin([conjoin([Atom(g.atoms[v]) for g, v in zip(model.groups, w.values)])
                    for w in worlds])


def minterms(c):
    """Atom tuples of the AND-CI chains under a left-nested OR-ME."""
    if isinstance(c, OrMENode):
        return minterms(c.left) + minterms(c.right)
    atoms = []
    while isinstance(c, AndCINode):
        assert isinstance(c.right, AtomNode)
        atoms.insert(0, c.right.atom)
        c = c.left
    assert isinstance(c, AtomNode)
    return [tuple([c.atom] + atoms)]


@pytest.mark.slow
class TestAssignmentSetQueries:

    @pytest.fixture
    def queries(self, shapes):
        worlds = enumerate_worlds(shapes)
        rng = np.random.default_rng(7)
        out = []
        for _ in range(50):
            size = int(rng.integers(1, len(worlds) + 1))
            chosen = [worlds[i] for i in sorted(rng.choice(len(worlds), size, replace=False))]
            out.append((chosen, assignment_query(shapes, chosen)))
        return out

    def test_compiles_to_or_me_over_and_ci(self, shapes, queries):
        for chosen, f in queries:
            result = compile_formula(f, shapes)
            assert result.equivalent and result.valid
            expected = [tuple(g.atoms[v] for g, v in zip(shapes.groups, w.values)) for w in chosen]
            assert minterms(result.circuit) == expected

    def test_continuous_oracle(self, gmm, queries):
        rng = np.random.default_rng(8)
        for chosen, f in queries:
            c = compile_formula(f, gmm.model).circuit
            for t in (0.05, 0.3, 0.7):
                x0, _ = gmm.sample_terminal(20, rng)
                a, sigma = float(gmm.schedule.alpha(t)), np.sqrt(float(gmm.schedule.noise_variance(t)))
                x = a * x0 + sigma * rng.standard_normal(x0.shape)
                out = eval_circuit(c, gmm.atomic_inputs(t, x), EvalSettings.exact_mode())
                posterior, score = gmm.formula_oracle(f, t, x)
                np.testing.assert_allclose(out.posterior, posterior, rtol=1e-10)
                np.testing.assert_allclose(out.score, score, atol=1e-8)

    def test_discrete_oracle(self, shapes, queries):
        dd = DiscreteDiffusion(shapes)
        assert (dd.n_states, dd.steps) == (9, 5)
        for chosen, f in queries:
            c = compile_formula(f, shapes).circuit
            for k in range(1, dd.steps + 1):
                for x in range(dd.n_states):
                    out = eval_transition(c, dd.atomic_inputs(k, x), EvalSettings.exact_mode())
                    posterior, row = dd.formula_oracle(f, k, x)
                    assert out.posterior == pytest.approx(posterior, abs=1e-9)
                    np.testing.assert_allclose(out.row, row, atol=1e-9)
