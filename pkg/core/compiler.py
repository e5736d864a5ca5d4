"""
Knowledge compilation module for LogiGuide.

Turns an arbitrary Boolean formula into an equivalent guidance circuit whose
nodes satisfy the CI/ME assumptions of the composition rules:

- categorical models: an OR-ME over the satisfying full assignments, each an
  AND-CI of one atom per group;
- taxonomies: an OR-ME over the exclusive refinements ("exactly node u")
  of the satisfying worlds, written with NOT and OR-ME nodes only.
"""

import logging
from dataclasses import dataclass
from functools import reduce
from typing import Optional

import numpy as np

from core.circuit import (
    AndCINode, AtomNode, CircuitNode, NotNode, OrMENode, circuit_event, circuit_size,
    validate_structure
)
from core.errors import CapExceededError, ModelError, UnsatisfiableFormulaError
from core.formula import DEFAULT_FDNF_CAP, Formula, evaluate_world, format_formula
from core.model import DEFAULT_WORLD_CAP, FeasibleWorldSet, enumerate_worlds

logger = logging.getLogger(__name__)


def _satisfying(f: Formula, worlds: FeasibleWorldSet):
    return [w for w in worlds if evaluate_world(f, w)]


def _disjoin_me(terms):
    return reduce(OrMENode, terms)


def compile_categorical(f: Formula, model, fdnf_cap: int = DEFAULT_FDNF_CAP,
                        world_cap: int = DEFAULT_WORLD_CAP) -> CircuitNode:
    """
    Compile ``f`` for a categorical model.

    Candidate minterms are the full group-value tuples, visited in
    lexicographic order; the satisfying ones become AND-CI chains (one atom
    per group, left-nested in group order) joined by a left-nested OR-ME.
    A single satisfying tuple is returned without the outer OR-ME.

    Raises:
        UnsatisfiableFormulaError: No feasible world satisfies ``f``
        CapExceededError: More atoms than ``fdnf_cap``
    """
    if model.kind != 'categorical':
        raise ModelError(f"compile_categorical needs a categorical model, got {model.kind}")
    if len(model.registry) > fdnf_cap:
        raise CapExceededError(
            f"Model has {len(model.registry)} atoms, above the FDNF cap of {fdnf_cap}")

    worlds = enumerate_worlds(model, cap=world_cap)
    satisfying = _satisfying(f, worlds)
    if not satisfying:
        raise UnsatisfiableFormulaError(
            f"Formula '{format_formula(f, model.registry)}' has no satisfying world")

    terms = []
    for world in satisfying:
        atoms = [AtomNode(group.atoms[v]) for group, v in zip(model.groups, world.values)]
        terms.append(reduce(AndCINode, atoms))
    logger.debug(f"Categorical compilation: {len(terms)} of {len(worlds)} minterms kept")
    return _disjoin_me(terms)


def refinement_circuit(model, atom) -> CircuitNode:
    """
    Circuit for the exclusive refinement of a taxonomy node.

    A leaf is its own atom. An internal node ``u`` with children
    ``k_1..k_n`` becomes ``~(~u |ME k_1 |ME ... |ME k_n)``; at the root
    ``u`` is always true and the ``~u`` disjunct is dropped.
    """
    children = model.children[atom]
    if not children:
        return AtomNode(atom)
    covered = _disjoin_me([AtomNode(k) for k in children])
    if atom == model.root_atom:
        return NotNode(covered)
    return NotNode(OrMENode(NotNode(AtomNode(atom)), covered))


def compile_taxonomy(f: Formula, model, world_cap: int = DEFAULT_WORLD_CAP) -> CircuitNode:
    """
    Compile ``f`` for a taxonomy model.

    Every taxonomy world is the exclusive refinement of one node, and these
    refinements are pairwise exclusive; the circuit is the OR-ME of the
    refinements of the satisfying worlds, in world order.

    Raises:
        UnsatisfiableFormulaError: No feasible world satisfies ``f``
    """
    if model.kind != 'taxonomy':
        raise ModelError(f"compile_taxonomy needs a taxonomy model, got {model.kind}")

    worlds = enumerate_worlds(model, cap=world_cap)
    satisfying = _satisfying(f, worlds)
    if not satisfying:
        raise UnsatisfiableFormulaError(
            f"Formula '{format_formula(f, model.registry)}' has no satisfying world")

    terms = [refinement_circuit(model, w.values[0]) for w in satisfying]
    logger.debug(f"Taxonomy compilation: {len(terms)} of {len(worlds)} refinements kept")
    return _disjoin_me(terms)


def check_equivalence(f: Formula, c: CircuitNode, model,
                      worlds: Optional[FeasibleWorldSet] = None) -> bool:
    """True iff ``f`` and ``c`` agree on every feasible world of ``model``."""
    if worlds is None:
        worlds = enumerate_worlds(model)
    expected = np.array([evaluate_world(f, w) for w in worlds], dtype=bool)
    actual = circuit_event(c, worlds.truth_matrix())
    return bool(np.array_equal(expected, actual))


@dataclass
class CompilationResult:
    """Compiled circuit plus the checks run on it."""
    circuit: CircuitNode
    equivalent: bool
    valid: bool
    degenerate: bool
    n_terms: int
    n_worlds: int

    @property
    def size(self) -> int:
        return circuit_size(self.circuit)


def compile_formula(f: Formula, model, fdnf_cap: int = DEFAULT_FDNF_CAP,
                    world_cap: int = DEFAULT_WORLD_CAP) -> CompilationResult:
    """
    Compile for whichever model family ``model`` belongs to, then check the
    result for equivalence and structural validity.

    A formula true on every feasible world compiles to a circuit whose
    posterior is identically 1; it is returned flagged ``degenerate``.
    """
    worlds = enumerate_worlds(model, cap=world_cap)
    if model.kind == 'categorical':
        circuit = compile_categorical(f, model, fdnf_cap=fdnf_cap, world_cap=world_cap)
    else:
        circuit = compile_taxonomy(f, model, world_cap=world_cap)

    event = circuit_event(circuit, worlds.truth_matrix())
    n_terms = int(event.sum())
    degenerate = n_terms == len(worlds)
    if degenerate:
        logger.warning("degenerate: zero score (formula holds on every feasible world)")

    result = CompilationResult(
        circuit=circuit,
        equivalent=check_equivalence(f, circuit, model, worlds),
        valid=validate_structure(circuit, model, worlds).ok,
        degenerate=degenerate,
        n_terms=n_terms,
        n_worlds=len(worlds),
    )
    logger.info(f"Compiled {model.kind} formula: {n_terms}/{len(worlds)} worlds, "
                f"{result.size} nodes")
    return result
