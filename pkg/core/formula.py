"""
Boolean formula module for LogiGuide.

Formulas are immutable trees over atoms registered in an AtomRegistry.
Surface syntax (EBNF):

    expr  := or
    or    := and (("|" | "|ME" | "|CI") and)*
    and   := unary ("&" unary)*
    unary := "~" unary | "(" expr ")" | atom | "true" | "false"
    atom  := [A-Za-z_][A-Za-z0-9_]* ("." [A-Za-z0-9_]+)?

n-ary ``&`` and ``|`` desugar to left-nested binary nodes. A ``|ME`` or
``|CI`` suffix pins the disjunction kind; a bare ``|`` leaves it to the
compiler.
"""

import logging
import re
from collections.abc import Mapping
from dataclasses import dataclass
from functools import reduce
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import (
    CapExceededError, FormulaSyntaxError, ModelError, UnassignedAtomError,
    UnknownAtomError, UnsatisfiableFormulaError
)

logger = logging.getLogger(__name__)

AtomId = int

DEFAULT_FDNF_CAP = 16
DEFAULT_NEG_PROB = 0.05

OR_KINDS = (None, 'ME', 'CI')


class AtomRegistry:
    """Ordered table of atom names; an atom's id is its index."""

    def __init__(self, names: Sequence[str]):
        self._names = tuple(names)
        self._index = {}
        for i, name in enumerate(self._names):
            if name in self._index:
                raise ModelError(f"Duplicate atom name: '{name}'")
            self._index[name] = i
        # short value names, for unqualified lookups
        self._short = {}
        for i, name in enumerate(self._names):
            short = name.rsplit('.', 1)[-1]
            self._short.setdefault(short, []).append(i)

    @property
    def names(self) -> Tuple[str, ...]:
        return self._names

    def __len__(self):
        return len(self._names)

    def __contains__(self, name):
        return name in self._index

    def __iter__(self):
        return iter(range(len(self._names)))

    def name(self, atom: AtomId) -> str:
        if not 0 <= atom < len(self._names):
            raise UnknownAtomError(f"Atom id {atom} outside registry of size {len(self._names)}")
        return self._names[atom]

    def lookup(self, name: str) -> AtomId:
        """
        Resolve an atom name.

        A qualified name (``color.red``) must match exactly; a bare name
        (``red``) also resolves when exactly one atom has that value name.
        """
        if name in self._index:
            return self._index[name]
        candidates = self._short.get(name, [])
        if len(candidates) == 1:
            return candidates[0]
        if len(candidates) > 1:
            options = ', '.join(self._names[i] for i in candidates)
            raise UnknownAtomError(f"Ambiguous atom name '{name}' (could be: {options})")
        raise UnknownAtomError(f"Unknown atom name: '{name}'")


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

class Formula:
    """Base class for formula nodes."""

    __slots__ = ()

    def __and__(self, other):
        return And(self, other)

    def __or__(self, other):
        return Or(self, other)

    def __invert__(self):
        return Not(self)

    def children(self) -> Tuple['Formula', ...]:
        return ()


@dataclass(frozen=True)
class TrueConst(Formula):
    pass


@dataclass(frozen=True)
class FalseConst(Formula):
    pass


TRUE = TrueConst()
FALSE = FalseConst()


@dataclass(frozen=True)
class Atom(Formula):
    atom: AtomId


@dataclass(frozen=True)
class Not(Formula):
    child: Formula

    def children(self):
        return (self.child,)


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula
    kind: Optional[str] = None

    def __post_init__(self):
        if self.kind not in OR_KINDS:
            raise ValueError(f"Invalid disjunction kind: {self.kind!r}")

    def children(self):
        return (self.left, self.right)


def postorder(root) -> Iterator:
    """Yield the nodes of a tree children-first, without recursion."""
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            yield node
            continue
        stack.append((node, True))
        for child in reversed(node.children()):
            stack.append((child, False))


def conjoin(items: Sequence[Formula]) -> Formula:
    """Left-nested conjunction; the empty conjunction is ``true``."""
    if not items:
        return TRUE
    return reduce(And, items)


def disjoin(items: Sequence[Formula], kind: Optional[str] = None) -> Formula:
    """Left-nested disjunction; the empty disjunction is ``false``."""
    if not items:
        return FALSE
    return reduce(lambda left, right: Or(left, right, kind), items)


def formula_atoms(f: Formula) -> Tuple[AtomId, ...]:
    """Atoms of ``f`` in left-to-right order, each listed once."""
    seen = []
    stack = [f]
    while stack:
        node = stack.pop()
        if isinstance(node, Atom):
            if node.atom not in seen:
                seen.append(node.atom)
        else:
            stack.extend(reversed(node.children()))
    return tuple(seen)


def count_operators(f: Formula) -> int:
    """Number of binary operators in ``f``."""
    return sum(1 for node in postorder(f) if isinstance(node, (And, Or)))


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

_PREC_OR, _PREC_AND, _PREC_UNARY = 1, 2, 3


def _precedence(node):
    if isinstance(node, Or):
        return _PREC_OR
    if isinstance(node, And):
        return _PREC_AND
    return _PREC_UNARY


def _or_symbol(kind):
    return '|' if kind is None else f'|{kind}'


def format_formula(f: Formula, registry: AtomRegistry) -> str:
    """
    Print a formula with minimal parentheses.

    The left spine of a chain of binary operators of equal precedence is
    flattened, so long left-nested chains (FDNF output) print without deep
    recursion.
    """
    if isinstance(f, TrueConst):
        return 'true'
    if isinstance(f, FalseConst):
        return 'false'
    if isinstance(f, Atom):
        return registry.name(f.atom)
    if isinstance(f, Not):
        inner = format_formula(f.child, registry)
        if _precedence(f.child) < _PREC_UNARY:
            inner = f'({inner})'
        return f'~{inner}'

    prec = _precedence(f)
    # walk down the left spine
    spine = []
    node = f
    while _precedence(node) == prec:
        spine.append(node)
        node = node.left
    head = format_formula(node, registry)
    if _precedence(node) < prec:
        head = f'({head})'
    parts = [head]
    for link in reversed(spine):
        right = format_formula(link.right, registry)
        if _precedence(link.right) <= prec:
            right = f'({right})'
        symbol = '&' if isinstance(link, And) else _or_symbol(link.kind)
        parts.append(f' {symbol} {right}')
    return ''.join(parts)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<or>\|(?:ME|CI)(?![A-Za-z0-9_.])|\|)
  | (?P<and>&)
  | (?P<not>~)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z0-9_]+)?)
""", re.VERBOSE)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    offset: int


def _byte_offset(text, index):
    return len(text[:index].encode('utf-8'))


def _tokenize(text) -> List[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise FormulaSyntaxError(
                f"Unexpected character {text[pos]!r}", _byte_offset(text, pos))
        kind = match.lastgroup
        if kind != 'ws':
            tokens.append(_Token(kind, match.group(), _byte_offset(text, pos)))
        pos = match.end()
    tokens.append(_Token('eof', '', _byte_offset(text, len(text))))
    return tokens


class _Parser:
    """Recursive-descent parser over the token list."""

    def __init__(self, text, registry):
        self.tokens = _tokenize(text)
        self.registry = registry
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def parse(self):
        node = self.parse_or()
        token = self.peek()
        if token.kind != 'eof':
            raise FormulaSyntaxError(f"Unexpected token '{token.text}'", token.offset)
        return node

    def parse_or(self):
        node = self.parse_and()
        while self.peek().kind == 'or':
            kind = self.advance().text[1:] or None
            node = Or(node, self.parse_and(), kind)
        return node

    def parse_and(self):
        node = self.parse_unary()
        while self.peek().kind == 'and':
            self.advance()
            node = And(node, self.parse_unary())
        return node

    def parse_unary(self):
        token = self.advance()
        if token.kind == 'not':
            return Not(self.parse_unary())
        if token.kind == 'lparen':
            node = self.parse_or()
            closing = self.advance()
            if closing.kind != 'rparen':
                raise FormulaSyntaxError("Expected ')'", closing.offset)
            return node
        if token.kind == 'ident':
            if token.text == 'true':
                return TRUE
            if token.text == 'false':
                return FALSE
            try:
                return Atom(self.registry.lookup(token.text))
            except UnknownAtomError as e:
                raise UnknownAtomError(f"{e.message} at offset {token.offset}") from None
        if token.kind == 'eof':
            raise FormulaSyntaxError("Unexpected end of input", token.offset)
        raise FormulaSyntaxError(f"Unexpected token '{token.text}'", token.offset)


def parse_formula(text: str, registry: AtomRegistry) -> Formula:
    """
    Parse query text into a Formula.

    Args:
        text (str): Query in the surface syntax
        registry (AtomRegistry): Names the query may refer to

    Returns:
        Formula: Parsed tree

    Raises:
        FormulaSyntaxError: Empty input or malformed text (with byte offset)
        UnknownAtomError: Atom name not registered
    """
    if text is None or not text.strip():
        raise FormulaSyntaxError("Empty formula", 0)
    return _Parser(text, registry).parse()


# ---------------------------------------------------------------------------
# Semantics
# ---------------------------------------------------------------------------

def _truth_lookup(world):
    truth = getattr(world, 'truth', world)
    if isinstance(truth, Mapping):
        return truth
    return dict(enumerate(truth))


def evaluate_world(f: Formula, world) -> bool:
    """
    Evaluate ``f`` on a world.

    ``world`` may be a World, a sequence of truth values indexed by atom id,
    or a mapping from atom id to truth value.
    """
    truth = _truth_lookup(world)
    values = {}
    for node in postorder(f):
        if isinstance(node, TrueConst):
            value = True
        elif isinstance(node, FalseConst):
            value = False
        elif isinstance(node, Atom):
            if node.atom not in truth:
                raise UnassignedAtomError(f"World assigns no value to atom {node.atom}")
            value = bool(truth[node.atom])
        elif isinstance(node, Not):
            value = not values[id(node.child)]
        elif isinstance(node, And):
            value = values[id(node.left)] and values[id(node.right)]
        else:
            value = values[id(node.left)] or values[id(node.right)]
        values[id(node)] = value
    return values[id(f)]


def to_fdnf(f: Formula, n_atoms: int, cap: int = DEFAULT_FDNF_CAP) -> Formula:
    """
    Full disjunctive normal form of ``f`` over atoms ``0 .. n_atoms-1``.

    Minterm ``i`` takes atom ``j`` positively iff bit ``j`` of ``i`` is set.
    Minterms appear in increasing ``i``; the result is ``false`` when no
    minterm satisfies ``f``.

    Raises:
        CapExceededError: ``n_atoms`` above ``cap``
    """
    if n_atoms > cap:
        raise CapExceededError(f"FDNF over {n_atoms} atoms exceeds cap of {cap} atoms")
    used = formula_atoms(f)
    if any(a >= n_atoms for a in used):
        raise UnknownAtomError(f"Formula uses atoms outside 0..{n_atoms - 1}")

    terms = []
    for i in range(2 ** n_atoms):
        bits = [(i >> j) & 1 == 1 for j in range(n_atoms)]
        if evaluate_world(f, bits):
            literals = [Atom(j) if bits[j] else Not(Atom(j)) for j in range(n_atoms)]
            terms.append(conjoin(literals))
    logger.debug(f"FDNF over {n_atoms} atoms: {len(terms)} minterms")
    return disjoin(terms)


# ---------------------------------------------------------------------------
# Random query generation
# ---------------------------------------------------------------------------

OPERATORS = ('and', 'or_ci', 'or_me')


class _Infeasible(Exception):
    pass


def _group_values(node, group) -> frozenset:
    """Values of a single group at which a one-group subformula holds."""
    if isinstance(node, Atom):
        return frozenset({node.atom})
    if isinstance(node, Not):
        return frozenset(int(v) for v in group) - _group_values(node.child, group)
    return _group_values(node.left, group) | _group_values(node.right, group)


def _grow_categorical(rng, groups, n_ops, operators, neg_prob):
    if n_ops == 0:
        group = groups[rng.integers(len(groups))]
        node = Atom(int(group[rng.integers(len(group))]))
    else:
        multi = [g for g in groups if len(g) >= 2]
        choices = [op for op in operators
                   if (op != 'or_me' and len(groups) >= 2) or (op == 'or_me' and multi)]
        if not choices:
            raise _Infeasible()
        op = choices[rng.integers(len(choices))]
        n_left = int(rng.integers(n_ops))
        n_right = n_ops - 1 - n_left
        if op == 'or_me':
            group = multi[rng.integers(len(multi))]
            if n_left == 0 and n_right == 0:
                i, j = rng.choice(len(group), size=2, replace=False)
                left, right = Atom(int(group[i])), Atom(int(group[j]))
                if rng.random() < neg_prob:
                    left = Not(left)
                if rng.random() < neg_prob:
                    right = Not(right)
            else:
                left = _grow_categorical(rng, [group], n_left, operators, neg_prob)
                right = _grow_categorical(rng, [group], n_right, operators, neg_prob)
            # overlapping disjuncts (a negated side, a repeated value) stay untagged
            disjoint = not _group_values(left, group) & _group_values(right, group)
            node = Or(left, right, 'ME' if disjoint else None)
        else:
            order = rng.permutation(len(groups))
            cut = int(rng.integers(1, len(groups)))
            left_groups = [groups[k] for k in order[:cut]]
            right_groups = [groups[k] for k in order[cut:]]
            left = _grow_categorical(rng, left_groups, n_left, operators, neg_prob)
            right = _grow_categorical(rng, right_groups, n_right, operators, neg_prob)
            node = And(left, right) if op == 'and' else Or(left, right, 'CI')
    if rng.random() < neg_prob:
        node = Not(node)
    return node


def _grow_taxonomy(rng, atoms, n_ops, neg_prob):
    if n_ops == 0:
        node = Atom(int(atoms[rng.integers(len(atoms))]))
    else:
        n_left = int(rng.integers(n_ops))
        left = _grow_taxonomy(rng, atoms, n_left, neg_prob)
        right = _grow_taxonomy(rng, atoms, n_ops - 1 - n_left, neg_prob)
        node = And(left, right) if rng.random() < 0.5 else Or(left, right)
    if rng.random() < neg_prob:
        node = Not(node)
    return node


def random_query(model, n_ops: int, neg_prob: float = DEFAULT_NEG_PROB, seed: int = 0,
                 operators: Optional[Sequence[str]] = None, max_attempts: int = 1000) -> Formula:
    """
    Generate a random satisfiable query with exactly ``n_ops`` binary operators.

    Categorical models: each operator is drawn uniformly from ``operators``
    (default: and, or_ci, or_me). ``and`` / ``or_ci`` split the available
    groups into a uniformly random nonempty bipartition between the two
    children; ``or_me`` restricts both children to one group and is tagged
    ``|ME`` only when the two sides share no value. Taxonomy
    models: ``and`` / ``or`` over non-root atoms, disjunction kind unpinned.
    Every node is negated with probability ``neg_prob``.

    Args:
        model: CategoricalModel or TaxonomyModel
        n_ops (int): Number of binary operators
        neg_prob (float): Per-node negation probability
        seed (int): RNG seed
        operators (list, optional): Restrict the operator choice

    Returns:
        Formula: Query, satisfiable under the model

    Raises:
        ModelError: The model cannot host the requested operator mix
    """
    from core.model import enumerate_worlds

    if n_ops < 0:
        raise ValueError(f"n_ops must be non-negative, got {n_ops}")
    if not 0.0 <= neg_prob <= 1.0:
        raise ValueError(f"neg_prob must lie in [0, 1], got {neg_prob}")
    operators = tuple(operators or OPERATORS)
    unknown = set(operators) - set(OPERATORS)
    if unknown:
        raise ValueError(f"Unknown operators: {sorted(unknown)}")

    rng = np.random.default_rng(seed)
    worlds = enumerate_worlds(model)

    infeasible = 0
    for _ in range(max_attempts):
        try:
            if model.kind == 'categorical':
                groups = [tuple(g.atoms) for g in model.groups]
                f = _grow_categorical(rng, groups, n_ops, operators, neg_prob)
            else:
                atoms = [a for a in range(len(model.registry)) if a != model.root_atom]
                f = _grow_taxonomy(rng, atoms or [model.root_atom], n_ops, neg_prob)
        except _Infeasible:
            infeasible += 1
            continue
        if any(evaluate_world(f, w) for w in worlds):
            return f

    if infeasible == max_attempts:
        raise ModelError(
            f"Model cannot host {n_ops} operators drawn from {list(operators)}")
    raise UnsatisfiableFormulaError(
        f"No satisfiable query found in {max_attempts} attempts")
