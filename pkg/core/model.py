"""
Distribution model module for LogiGuide.

Describes how the atomic predicates relate to each other: categorical
groups (ME within a group, CI across groups, exactly one true atom per
group) or a rooted taxonomy (siblings ME, children nested in parents).
Feasible worlds are enumerated explicitly so that every semantic question
can be answered by brute force.
"""

import itertools
import json
import logging
import math
import os
from collections.abc import Sequence as SequenceABC
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import CapExceededError, ModelError, UnknownAtomError
from core.formula import AtomId, AtomRegistry
from core.validation import ValidationReport

logger = logging.getLogger(__name__)

DEFAULT_WORLD_CAP = 1_000_000


@dataclass(frozen=True)
class World:
    """
    Total truth assignment over the registry.

    ``values`` holds the structured coordinates: one value index per group
    for categorical models, the most-specific node index for taxonomies.
    """
    truth: Tuple[bool, ...]
    values: Tuple[int, ...]
    label: str


class FeasibleWorldSet(SequenceABC):
    """Enumerated worlds of a model, in a fixed order."""

    def __init__(self, worlds: Sequence[World]):
        self._worlds = tuple(worlds)
        self._position = {w: i for i, w in enumerate(self._worlds)}

    def __getitem__(self, i):
        return self._worlds[i]

    def __len__(self):
        return len(self._worlds)

    def index(self, world, *args):
        return self._position[world]

    def truth_matrix(self) -> np.ndarray:
        """Boolean array of shape (n_worlds, n_atoms)."""
        return np.array([w.truth for w in self._worlds], dtype=bool)


@dataclass(frozen=True)
class CategoricalGroup:
    name: str
    atoms: Tuple[AtomId, ...]


class CategoricalModel:
    """Groups S_1..S_M of atoms, one atom per categorical value."""

    kind = 'categorical'

    def __init__(self, registry: AtomRegistry, groups: Sequence[CategoricalGroup], name: str = None):
        self.registry = registry
        self.groups = tuple(groups)
        self.name = name or 'categorical'
        self.atom_group = {}
        for m, group in enumerate(self.groups):
            for atom in group.atoms:
                self.atom_group.setdefault(atom, m)

    @classmethod
    def from_values(cls, values: Dict[str, Sequence[str]], name: str = None):
        """
        Build a model from ``{group name: [value names]}``.

        Atom names are ``<group>.<value>``, registered group by group.
        """
        names = []
        groups = []
        for group_name, group_values in values.items():
            start = len(names)
            names.extend(f"{group_name}.{v}" for v in group_values)
            groups.append(CategoricalGroup(group_name, tuple(range(start, len(names)))))
        return cls(AtomRegistry(names), groups, name=name)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(len(g.atoms) for g in self.groups)

    def world_count(self) -> int:
        return math.prod(self.shape)

    def value_name(self, atom: AtomId) -> str:
        return self.registry.name(atom).rsplit('.', 1)[-1]

    def group_of(self, atom: AtomId) -> int:
        if atom not in self.atom_group:
            raise UnknownAtomError(f"Atom {atom} belongs to no group")
        return self.atom_group[atom]

    def to_dict(self) -> dict:
        return {
            'kind': 'categorical',
            'groups': [
                {'name': g.name, 'values': [self.value_name(a) for a in g.atoms]}
                for g in self.groups
            ],
        }


@dataclass(frozen=True)
class TaxonomyNode:
    name: str
    parents: Tuple[str, ...]
    exhaustive: bool = False


class TaxonomyModel:
    """
    Rooted taxonomy with one atom per node.

    A node's exclusive refinement ("exactly this node, none of its
    children") is a world unless the node is declared exhaustive, meaning
    its children cover it.
    """

    kind = 'taxonomy'

    def __init__(self, nodes: Sequence[TaxonomyNode], name: str = None):
        self.nodes = tuple(nodes)
        self.name = name or 'taxonomy'
        self.registry = AtomRegistry([n.name for n in self.nodes])
        self.children: Dict[AtomId, List[AtomId]] = {i: [] for i in range(len(self.nodes))}
        self.parents: Dict[AtomId, List[AtomId]] = {}
        for i, node in enumerate(self.nodes):
            resolved = []
            for parent in node.parents:
                if parent not in self.registry:
                    continue
                p = self.registry.lookup(parent)
                resolved.append(p)
                self.children[p].append(i)
            self.parents[i] = resolved
        self.roots = [i for i, n in enumerate(self.nodes) if not n.parents]

    @classmethod
    def from_parents(cls, parents: Dict[str, Optional[str]], exhaustive: Sequence[str] = (), name: str = None):
        """Build from ``{node: parent or None}`` in declaration order."""
        nodes = []
        for node, parent in parents.items():
            if parent is None:
                ps = ()
            elif isinstance(parent, str):
                ps = (parent,)
            else:
                ps = tuple(parent)
            nodes.append(TaxonomyNode(node, ps, node in exhaustive))
        return cls(nodes, name=name)

    @property
    def root_atom(self) -> AtomId:
        if len(self.roots) != 1:
            raise ModelError(f"Taxonomy must have exactly one root, found {len(self.roots)}")
        return self.roots[0]

    def ancestors(self, atom: AtomId) -> FrozenSet[AtomId]:
        """The node itself and everything above it."""
        seen = {atom}
        stack = [atom]
        while stack:
            for p in self.parents[stack.pop()]:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return frozenset(seen)

    def has_refinement(self, atom: AtomId) -> bool:
        """Whether ``atom``'s exclusive refinement is a nonempty event."""
        return not self.children[atom] or not self.nodes[atom].exhaustive

    def world_count(self) -> int:
        return sum(1 for a in range(len(self.nodes)) if self.has_refinement(a))

    def to_dict(self) -> dict:
        nodes = []
        for n in self.nodes:
            parent = None if not n.parents else (n.parents[0] if len(n.parents) == 1 else list(n.parents))
            doc = {'name': n.name, 'parent': parent}
            if n.exhaustive:
                doc['exhaustive'] = True
            nodes.append(doc)
        return {'kind': 'taxonomy', 'nodes': nodes}


# ---------------------------------------------------------------------------
# Worlds and events
# ---------------------------------------------------------------------------

def enumerate_worlds(model, cap: int = DEFAULT_WORLD_CAP) -> FeasibleWorldSet:
    """
    Enumerate every world consistent with the model.

    Categorical worlds come in lexicographic order of value tuples (first
    group slowest); taxonomy worlds follow node declaration order.

    Raises:
        CapExceededError: More than ``cap`` worlds
    """
    count = model.world_count()
    if count > cap:
        raise CapExceededError(f"Model has {count} worlds, above the cap of {cap}")

    n_atoms = len(model.registry)
    worlds = []
    if model.kind == 'categorical':
        for values in itertools.product(*(range(len(g.atoms)) for g in model.groups)):
            truth = [False] * n_atoms
            names = []
            for group, v in zip(model.groups, values):
                truth[group.atoms[v]] = True
                names.append(model.value_name(group.atoms[v]))
            worlds.append(World(tuple(truth), tuple(values), '/'.join(names)))
    else:
        for atom in range(n_atoms):
            if not model.has_refinement(atom):
                continue
            above = model.ancestors(atom)
            truth = tuple(a in above for a in range(n_atoms))
            worlds.append(World(truth, (atom,), model.registry.name(atom)))
    return FeasibleWorldSet(worlds)


def atom_event(model, atom: AtomId, worlds: Optional[FeasibleWorldSet] = None) -> FrozenSet[World]:
    """Feasible worlds in which ``atom`` holds."""
    model.registry.name(atom)
    if worlds is None:
        worlds = enumerate_worlds(model)
    return frozenset(w for w in worlds if w.truth[atom])


def validate_model(model) -> ValidationReport:
    """
    Check the structural conditions the compiler relies on.

    Categorical: groups are nonempty and partition the atom set.
    Taxonomy: a single root, known parents, no cycles, single parents, and
    every pair of atom events is disjoint or nested.
    """
    report = ValidationReport(model.name)
    if model.kind == 'categorical':
        _validate_categorical(model, report)
    elif model.kind == 'taxonomy':
        _validate_taxonomy(model, report)
    else:
        report.add('kind', f"Unsupported model kind: {model.kind!r}")
    if report.ok:
        logger.debug(f"Model '{model.name}' valid ({report.checked} checks)")
    else:
        logger.warning(f"Model '{model.name}' has {len(report.issues)} violation(s)")
    return report


def _validate_categorical(model, report):
    names = model.registry.names
    owner = {}
    for group in model.groups:
        report.checked += 1
        if not group.atoms:
            report.add('empty_group', f"Group '{group.name}' has no values")
        for atom in group.atoms:
            report.checked += 1
            if atom >= len(names):
                report.add('unknown_atom', f"Group '{group.name}' refers to atom {atom}")
                continue
            if atom in owner:
                report.add('not_a_partition',
                           f"Atom '{names[atom]}' appears in more than one group or twice in a group",
                           pair=(owner[atom], group.name))
            else:
                owner[atom] = group.name
    for atom, name in enumerate(names):
        report.checked += 1
        if atom not in owner:
            report.add('not_a_partition', f"Atom '{name}' belongs to no group",
                       hint="Every atom must belong to exactly one group")


def _has_cycle(model):
    state = {}
    for start in range(len(model.nodes)):
        if start in state:
            continue
        stack = [(start, iter(model.parents[start]))]
        state[start] = 'open'
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 'done'
                stack.pop()
            elif state.get(nxt) == 'open':
                return True
            elif nxt not in state:
                state[nxt] = 'open'
                stack.append((nxt, iter(model.parents[nxt])))
    return False


def _validate_taxonomy(model, report):
    names = model.registry.names
    report.checked += 1
    if len(model.roots) != 1:
        report.add('root', f"Expected exactly one root, found {len(model.roots)}",
                   hint="Exactly one node must have parent null")
    for i, node in enumerate(model.nodes):
        report.checked += 1
        for parent in node.parents:
            if parent not in model.registry:
                report.add('unknown_parent', f"Node '{node.name}' has unknown parent '{parent}'")
        if len(node.parents) > 1:
            report.add('tree', f"Node '{node.name}' has {len(node.parents)} parents")
    if _has_cycle(model):
        report.add('cycle', "Parent links form a cycle")
        return

    worlds = enumerate_worlds(model)
    events = [atom_event(model, a, worlds) for a in range(len(names))]
    if len(model.roots) == 1:
        report.checked += 1
        if events[model.roots[0]] != frozenset(worlds):
            report.add('root', "Root event does not cover every world")
    for i, j in itertools.combinations(range(len(names)), 2):
        report.checked += 1
        inter = events[i] & events[j]
        if inter and inter != events[i] and inter != events[j]:
            report.add('me_or_nested', "Atom events overlap without nesting",
                       pair=(names[i], names[j]))


# ---------------------------------------------------------------------------
# JSON documents
# ---------------------------------------------------------------------------

def model_from_dict(doc: dict):
    """Build a model from its JSON document."""
    if 'groups' in doc and 'nodes' in doc:
        raise ModelError("Mixed categorical/taxonomy models are not supported")
    kind = doc.get('kind')
    name = doc.get('name')
    if kind == 'categorical':
        groups = doc.get('groups')
        if not isinstance(groups, list) or not groups:
            raise ModelError("Categorical model needs a nonempty 'groups' list")
        values = {}
        for g in groups:
            if 'name' not in g or 'values' not in g:
                raise ModelError("Each group needs 'name' and 'values'")
            if g['name'] in values:
                raise ModelError(f"Duplicate group name: '{g['name']}'")
            values[g['name']] = [str(v) for v in g['values']]
        return CategoricalModel.from_values(values, name=name)
    if kind == 'taxonomy':
        nodes = doc.get('nodes')
        if not isinstance(nodes, list) or not nodes:
            raise ModelError("Taxonomy model needs a nonempty 'nodes' list")
        built = []
        for n in nodes:
            if 'name' not in n:
                raise ModelError("Each taxonomy node needs a 'name'")
            parent = n.get('parent')
            parents = () if parent is None else ((parent,) if isinstance(parent, str) else tuple(parent))
            built.append(TaxonomyNode(n['name'], parents, bool(n.get('exhaustive', False))))
        return TaxonomyModel(built, name=name)
    raise ModelError(f"Unknown model kind: {kind!r}")


def load_model(model_path: str) -> Tuple[object, dict]:
    """
    Load a model JSON file.

    Returns:
        tuple: (model, testbed config dict, empty if absent)
    """
    if not os.path.exists(model_path):
        raise FileNotFoundError(f"Model file not found: {model_path}")
    with open(model_path, 'r', encoding='utf-8') as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ModelError(f"Invalid JSON in {model_path}: {e}") from None
    model = model_from_dict(doc)
    report = validate_model(model)
    if not report.ok:
        details = '; '.join(f"{i.condition}: {i.message}" for i in report.issues)
        raise ModelError(f"Invalid model {model_path}: {details}")
    logger.info(f"Loaded {model.kind} model '{model.name}' from {model_path} "
                f"({len(model.registry)} atoms, {model.world_count()} worlds)")
    return model, doc.get('testbed', {})
