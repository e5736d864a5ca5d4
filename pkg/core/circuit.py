"""
Guidance circuit module for LogiGuide.

A guidance circuit is a formula tree whose internal nodes carry the
independence assumption the composition rules need: AND-CI, OR-CI (children
conditionally independent given the state) and OR-ME (children mutually
exclusive). This module holds the node types, the structural check of those
assumptions against a distribution model, and the s-expression dump/reader.
"""

import logging
import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from core.errors import CircuitError, UnknownAtomError
from core.formula import (
    And, Atom, AtomId, AtomRegistry, FalseConst, Formula, Not, Or, TrueConst, postorder
)
from core.validation import ValidationReport

logger = logging.getLogger(__name__)

STATUS_OK = 'ok'
STATUS_CI = 'CI-violation'
STATUS_ME = 'ME-violation'


class CircuitNode:
    """Base class for circuit nodes."""

    __slots__ = ()
    label = ''

    def children(self) -> Tuple['CircuitNode', ...]:
        return ()


@dataclass(frozen=True)
class AtomNode(CircuitNode):
    atom: AtomId
    label = 'atom'


@dataclass(frozen=True)
class NotNode(CircuitNode):
    child: CircuitNode
    label = 'not'

    def children(self):
        return (self.child,)


@dataclass(frozen=True)
class AndCINode(CircuitNode):
    left: CircuitNode
    right: CircuitNode
    label = 'andCI'

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class OrCINode(CircuitNode):
    left: CircuitNode
    right: CircuitNode
    label = 'orCI'

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class OrMENode(CircuitNode):
    left: CircuitNode
    right: CircuitNode
    label = 'orME'

    def children(self):
        return (self.left, self.right)


_BINARY = {'andCI': AndCINode, 'orCI': OrCINode, 'orME': OrMENode}


def circuit_atoms(c: CircuitNode) -> Tuple[AtomId, ...]:
    """Atoms in left-to-right leaf order, each listed once."""
    seen = []
    stack = [c]
    while stack:
        node = stack.pop()
        if isinstance(node, AtomNode):
            if node.atom not in seen:
                seen.append(node.atom)
        else:
            stack.extend(reversed(node.children()))
    return tuple(seen)


def circuit_size(c: CircuitNode) -> int:
    return sum(1 for _ in postorder(c))


# ---------------------------------------------------------------------------
# Conversions
# ---------------------------------------------------------------------------

def circuit_to_formula(c: CircuitNode) -> Formula:
    """Read a circuit back as a formula; disjunctions keep their kind."""
    built = {}
    for node in postorder(c):
        if isinstance(node, AtomNode):
            f = Atom(node.atom)
        elif isinstance(node, NotNode):
            f = Not(built[id(node.child)])
        elif isinstance(node, AndCINode):
            f = And(built[id(node.left)], built[id(node.right)])
        elif isinstance(node, OrCINode):
            f = Or(built[id(node.left)], built[id(node.right)], 'CI')
        else:
            f = Or(built[id(node.left)], built[id(node.right)], 'ME')
        built[id(node)] = f
    return built[id(c)]


def circuit_from_formula(f: Formula) -> CircuitNode:
    """
    Map a formula onto a circuit node for node, without compilation.

    Every disjunction must be pinned (``|ME`` or ``|CI``); conjunctions are
    read as AND-CI. Constants have no circuit form.

    Raises:
        CircuitError: Unpinned disjunction or a true/false constant
    """
    built = {}
    for node in postorder(f):
        if isinstance(node, (TrueConst, FalseConst)):
            raise CircuitError("Constants true/false cannot appear in a guidance circuit")
        if isinstance(node, Atom):
            c = AtomNode(node.atom)
        elif isinstance(node, Not):
            c = NotNode(built[id(node.child)])
        elif isinstance(node, And):
            c = AndCINode(built[id(node.left)], built[id(node.right)])
        elif node.kind is None:
            raise CircuitError("Disjunction without a kind; write '|ME' or '|CI', or compile the formula")
        else:
            cls = OrMENode if node.kind == 'ME' else OrCINode
            c = cls(built[id(node.left)], built[id(node.right)])
        built[id(node)] = c
    return built[id(f)]


# ---------------------------------------------------------------------------
# Semantics over enumerated worlds
# ---------------------------------------------------------------------------

def node_events(c: CircuitNode, truth: np.ndarray) -> Dict[int, np.ndarray]:
    """
    Event of every node as a boolean vector over worlds.

    Args:
        truth: (n_worlds, n_atoms) truth matrix of the enumerated worlds

    Returns:
        dict: id(node) -> bool array of shape (n_worlds,)
    """
    events = {}
    for node in postorder(c):
        if isinstance(node, AtomNode):
            if not 0 <= node.atom < truth.shape[1]:
                raise UnknownAtomError(f"Circuit uses atom {node.atom} outside the model")
            e = truth[:, node.atom]
        elif isinstance(node, NotNode):
            e = ~events[id(node.child)]
        elif isinstance(node, AndCINode):
            e = events[id(node.left)] & events[id(node.right)]
        else:
            e = events[id(node.left)] | events[id(node.right)]
        events[id(node)] = e
    return events


def circuit_event(c: CircuitNode, truth: np.ndarray) -> np.ndarray:
    return node_events(c, truth)[id(c)]


# ---------------------------------------------------------------------------
# Structural validation
# ---------------------------------------------------------------------------

class CircuitReport(ValidationReport):
    """Validation report with one status per node, in post-order."""

    def __init__(self, subject: str):
        super().__init__(subject)
        self.node_status: List[Tuple[str, str]] = []

    def record(self, node: CircuitNode, status: str):
        self.node_status.append((node.label, status))
        self.checked += 1


def validate_structure(c: CircuitNode, model, worlds=None) -> CircuitReport:
    """
    Check the CI and ME assumptions of every typed node.

    CI nodes pass when their children touch disjoint sets of categorical
    groups; in a taxonomy there is no CI certificate, so CI nodes fail.
    OR-ME nodes pass when the children's events share no feasible world.

    Args:
        c: Circuit to check
        model: CategoricalModel or TaxonomyModel
        worlds: Pre-enumerated worlds of ``model`` (optional)

    Raises:
        CapExceededError: World enumeration above the cap
    """
    from core.model import enumerate_worlds

    if worlds is None:
        worlds = enumerate_worlds(model)
    names = model.registry.names
    events = node_events(c, worlds.truth_matrix())
    report = CircuitReport(format_circuit(c, model.registry) if circuit_size(c) <= 15 else 'circuit')

    # per node: (first atom, groups touched)
    scope = {}
    for node in postorder(c):
        status = STATUS_OK
        if isinstance(node, AtomNode):
            groups = {model.group_of(node.atom)} if model.kind == 'categorical' else set()
            scope[id(node)] = (node.atom, frozenset(groups))
            report.record(node, status)
            continue
        kids = [scope[id(child)] for child in node.children()]
        scope[id(node)] = (kids[0][0], frozenset().union(*(k[1] for k in kids)))
        if isinstance(node, (AndCINode, OrCINode)):
            pair = (names[kids[0][0]], names[kids[1][0]])
            if model.kind != 'categorical':
                status = STATUS_CI
                report.add(STATUS_CI, f"{node.label} node has no CI certificate in a taxonomy",
                           pair=pair, hint="Taxonomy circuits use only NOT and OR-ME nodes")
            else:
                shared = kids[0][1] & kids[1][1]
                if shared:
                    status = STATUS_CI
                    group = model.groups[min(shared)].name
                    report.add(STATUS_CI, f"{node.label} children share group '{group}'", pair=pair)
        elif isinstance(node, OrMENode):
            overlap = events[id(node.left)] & events[id(node.right)]
            if overlap.any():
                status = STATUS_ME
                world = worlds[int(np.argmax(overlap))]
                report.add(STATUS_ME, f"orME children both hold in world '{world.label}'",
                           pair=(names[kids[0][0]], names[kids[1][0]]))
        report.record(node, status)

    if not report.ok:
        logger.debug(f"Circuit structure: {len(report.issues)} violation(s)")
    return report


# ---------------------------------------------------------------------------
# S-expression dump and reader
# ---------------------------------------------------------------------------

def format_circuit(c: CircuitNode, registry: AtomRegistry) -> str:
    """Dump as an s-expression, e.g. ``(orME (andCI digit.1 color.blue) ...)``."""
    out = []
    stack = [c]
    while stack:
        item = stack.pop()
        if isinstance(item, str):
            out.append(item)
        elif isinstance(item, AtomNode):
            out.append(' ' + registry.name(item.atom))
        else:
            out.append(f' ({item.label}')
            stack.append(')')
            stack.extend(reversed(item.children()))
    return ''.join(out).strip()


_SEXP_TOKEN_RE = re.compile(r"\(|\)|[^\s()]+")


def parse_circuit(text: str, registry: AtomRegistry) -> CircuitNode:
    """
    Read a circuit s-expression.

    ``(andCI a b c)`` with more than two operands nests to the left.

    Raises:
        CircuitError: Malformed text or unknown operator
        UnknownAtomError: Unregistered atom name
    """
    tokens = _SEXP_TOKEN_RE.findall(text or '')
    if not tokens:
        raise CircuitError("Empty circuit")
    stack: List[Tuple[Optional[str], list]] = [(None, [])]
    pos = 0
    while pos < len(tokens):
        token = tokens[pos]
        if token == '(':
            if pos + 1 >= len(tokens):
                raise CircuitError("Unexpected end of circuit text")
            op = tokens[pos + 1]
            if op not in _BINARY and op != 'not':
                raise CircuitError(f"Unknown circuit operator '{op}'")
            stack.append((op, []))
            pos += 2
            continue
        if token == ')':
            if len(stack) == 1:
                raise CircuitError("Unbalanced ')'")
            op, args = stack.pop()
            if op == 'not':
                if len(args) != 1:
                    raise CircuitError(f"'not' takes one operand, got {len(args)}")
                node = NotNode(args[0])
            else:
                if len(args) < 2:
                    raise CircuitError(f"'{op}' takes at least two operands, got {len(args)}")
                node = args[0]
                for arg in args[1:]:
                    node = _BINARY[op](node, arg)
            stack[-1][1].append(node)
        else:
            stack[-1][1].append(AtomNode(registry.lookup(token)))
        pos += 1
    if len(stack) != 1:
        raise CircuitError("Unbalanced '('")
    roots = stack[0][1]
    if len(roots) != 1:
        raise CircuitError(f"Expected one circuit, found {len(roots)}")
    return roots[0]
