"""Grammar, AST and validator for the nested-until probabilistic formula
fragment, plus the six monotone specification-update rules.

A formula is a right-nested chain of blocks

    Pmax=? [ P{>=|>}p_1 [ phi_1 U ( psi_1 & P{>=|>}p_2 [ ... ] ) ] ]

where each phi_j is a CNF (conjunction of disjunction clauses, ``true``
for the empty CNF) and each psi_j a DNF (disjunction of conjunction
clauses) over polarity literals ``name`` / ``!name``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Optional

from .environment import ExtProp

INCREASE = "increase"
DECREASE = "decrease"

ADD_PSI_CLAUSE = "add_psi_clause"        # update 1
REMOVE_PSI_CLAUSE = "remove_psi_clause"  # update 2
REMOVE_PHI_CLAUSE = "remove_phi_clause"  # update 3
ADD_PHI_CLAUSE = "add_phi_clause"        # update 4
LOWER_THRESHOLD = "lower_threshold"      # update 5
RAISE_THRESHOLD = "raise_threshold"      # update 6

_DIRECTION = {
    ADD_PSI_CLAUSE: INCREASE,
    REMOVE_PSI_CLAUSE: DECREASE,
    REMOVE_PHI_CLAUSE: INCREASE,
    ADD_PHI_CLAUSE: DECREASE,
    LOWER_THRESHOLD: INCREASE,
    RAISE_THRESHOLD: DECREASE,
}


class FormulaError(ValueError):
    """A formula falls outside the supported fragment."""


class ParseError(FormulaError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Clause:
    """Set of literals joined by one connective.

    kind "or" is a disjunction clause (CNF member), kind "and" a
    conjunction clause (DNF member).  Both polarities of one base are
    rejected: such a conjunction is unsatisfiable and such a disjunction
    a tautology, almost certainly a user error.
    """

    kind: str
    literals: frozenset[ExtProp]

    def __post_init__(self):
        if self.kind not in ("and", "or"):
            raise FormulaError(f"bad clause kind {self.kind!r}")
        if not self.literals:
            raise FormulaError("empty clause")
        bases = {}
        for lit in self.literals:
            if bases.setdefault(lit.base, lit.positive) != lit.positive:
                raise FormulaError(
                    f"clause contains both polarities of {lit.base!r}: {self.text()}"
                )

    def text(self) -> str:
        lits = sorted(self.literals, key=lambda e: (e.base, not e.positive))
        sep = " & " if self.kind == "and" else " | "
        body = sep.join(str(l) for l in lits)
        return f"({body})" if len(lits) > 1 else body

    def holds(self, theta: frozenset[ExtProp]) -> bool:
        if self.kind == "and":
            return self.literals <= theta
        return not self.literals.isdisjoint(theta)


def conj(*lits: ExtProp) -> Clause:
    return Clause("and", frozenset(lits))


def disj(*lits: ExtProp) -> Clause:
    return Clause("or", frozenset(lits))


@dataclass(frozen=True)
class Block:
    """One (phi_j, psi_j, p_j) until block of the chain."""

    phi: tuple[Clause, ...]  # CNF; empty tuple means `true`
    psi: tuple[Clause, ...]  # DNF; never empty
    p: float
    strict: bool = False  # comparator is > rather than >=

    def __post_init__(self):
        if not self.psi:
            raise FormulaError("a block's reach condition (DNF) must be non-empty")
        for c in self.phi:
            if c.kind != "or":
                raise FormulaError("CNF side must consist of disjunction clauses")
        for c in self.psi:
            if c.kind != "and":
                raise FormulaError("DNF side must consist of conjunction clauses")
        if not 0.0 <= self.p <= 1.0:
            raise FormulaError(f"probability threshold {self.p} outside [0, 1]")

    def phi_holds(self, theta: frozenset[ExtProp]) -> bool:
        return all(c.holds(theta) for c in self.phi)

    def psi_holds(self, theta: frozenset[ExtProp]) -> bool:
        return any(c.holds(theta) for c in self.psi)

    def meets_threshold(self, v: float) -> bool:
        return v > self.p if self.strict else v >= self.p


@dataclass(frozen=True)
class Formula:
    """The full nested-until chain Block_1 ... Block_f."""

    blocks: tuple[Block, ...]

    def __post_init__(self):
        if not self.blocks:
            raise FormulaError("a formula needs at least one block")

    def __len__(self) -> int:
        return len(self.blocks)

    def text(self) -> str:
        return f"Pmax=? [ {self._block_text(0)} ]"

    def _block_text(self, j: int) -> str:
        b = self.blocks[j]
        cmp_ = ">" if b.strict else ">="
        phi = " & ".join(c.text() for c in b.phi) if b.phi else "true"
        psi = " | ".join(c.text() for c in b.psi)
        if len(b.psi) > 1:
            psi = f"({psi})"
        if j + 1 < len(self.blocks):
            rhs = f"({psi} & {self._block_text(j + 1)})"
        else:
            rhs = psi
        return f"P{cmp_}{_fmt_number(b.p)} [ {phi} U {rhs} ]"

    def bases(self) -> frozenset[str]:
        out = set()
        for b in self.blocks:
            for c in b.phi + b.psi:
                out.update(l.base for l in c.literals)
        return frozenset(out)

    def to_dict(self) -> dict:
        return {"text": self.text()}


def _fmt_number(p: float) -> str:
    return repr(p)


# --- tokenizer / recursive-descent parser ---------------------------------

_TOKEN_RE = re.compile(
    r"""(?P<ws>\s+)
      | (?P<pmax>Pmax=\?)
      | (?P<pge>P>=)
      | (?P<pgt>P>)
      | (?P<num>\d+(\.\d+)?([eE][+-]?\d+)?)
      | (?P<lb>\[) | (?P<rb>\])
      | (?P<lp>\() | (?P<rp>\))
      | (?P<and>&) | (?P<or>\|) | (?P<not>!)
      | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
    """,
    re.VERBOSE,
)

_KEYWORDS = {"U", "true"}


@dataclass
class _Token:
    kind: str
    value: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        value = m.group()
        if kind != "ws":
            if kind == "name" and value in _KEYWORDS:
                kind = value
            tokens.append(_Token(kind, value, line, col))
        nl = value.count("\n")
        if nl:
            line += nl
            col = len(value) - value.rfind("\n")
        else:
            col += len(value)
        pos = m.end()
    tokens.append(_Token("eof", "", line, col))
    return tokens


# internal expression nodes used between parsing and CNF/DNF shaping
@dataclass(frozen=True)
class _Lit:
    lit: ExtProp


@dataclass(frozen=True)
class _True:
    pass


@dataclass(frozen=True)
class _BlockRef:
    block_index: int


@dataclass(frozen=True)
class _And:
    args: tuple


@dataclass(frozen=True)
class _Or:
    args: tuple


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0
        self.blocks: list[Optional[Block]] = []

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def take(self, kind: str) -> _Token:
        tok = self.tokens[self.i]
        if tok.kind != kind:
            raise ParseError(f"expected {kind!r}, found {tok.value or 'end of input'!r}",
                             tok.line, tok.col)
        self.i += 1
        return tok

    def parse(self) -> Formula:
        self.take("pmax")
        self.take("lb")
        self.parse_block()
        self.take("rb")
        tok = self.peek()
        if tok.kind != "eof":
            raise ParseError(f"trailing input {tok.value!r}", tok.line, tok.col)
        return Formula(tuple(self.blocks))

    def parse_block(self) -> int:
        tok = self.peek()
        if tok.kind == "pge":
            strict = False
            self.i += 1
        elif tok.kind == "pgt":
            strict = True
            self.i += 1
        else:
            raise ParseError(f"expected a probability bound, found {tok.value!r}",
                             tok.line, tok.col)
        p = float(self.take("num").value)
        index = len(self.blocks)
        self.blocks.append(None)  # reserve the slot: outer blocks precede inner
        self.take("lb")
        lhs_tok = self.peek()
        lhs = self.parse_expr()
        self.take("U")
        rhs_tok = self.peek()
        rhs = self.parse_expr()
        self.take("rb")

        psi_expr, nested = self.split_rhs(rhs, rhs_tok)
        if nested is not None and nested != index + 1:
            raise ParseError("nested block must be the innermost conjunct",
                             rhs_tok.line, rhs_tok.col)
        phi = self.to_cnf(lhs, lhs_tok)
        psi = self.to_dnf(psi_expr, rhs_tok)
        try:
            self.blocks[index] = Block(phi=phi, psi=psi, p=p, strict=strict)
        except FormulaError as exc:
            raise ParseError(str(exc), tok.line, tok.col) from exc
        return index

    def parse_expr(self):
        return self.parse_or()

    def parse_or(self):
        args = [self.parse_and()]
        while self.peek().kind == "or":
            self.i += 1
            args.append(self.parse_and())
        return args[0] if len(args) == 1 else _Or(tuple(self.flatten(args, _Or)))

    def parse_and(self):
        args = [self.parse_atom()]
        while self.peek().kind == "and":
            self.i += 1
            args.append(self.parse_atom())
        return args[0] if len(args) == 1 else _And(tuple(self.flatten(args, _And)))

    @staticmethod
    def flatten(args, node_type):
        out = []
        for a in args:
            if isinstance(a, node_type):
                out.extend(a.args)
            else:
                out.append(a)
        return out

    def parse_atom(self):
        tok = self.peek()
        if tok.kind == "lp":
            self.i += 1
            inner = self.parse_expr()
            self.take("rp")
            return inner
        if tok.kind == "not":
            self.i += 1
            name = self.take("name")
            return _Lit(ExtProp(name.value, False))
        if tok.kind == "name":
            self.i += 1
            return _Lit(ExtProp(tok.value, True))
        if tok.kind == "true":
            self.i += 1
            return _True()
        if tok.kind in ("pge", "pgt"):
            return _BlockRef(self.parse_block())
        raise ParseError(f"expected a literal, 'true', '(' or a nested block; "
                         f"found {tok.value or 'end of input'!r}", tok.line, tok.col)

    def split_rhs(self, rhs, tok) -> tuple[object, Optional[int]]:
        """Separate the DNF part from the optional nested block conjunct."""
        if isinstance(rhs, _BlockRef):
            raise ParseError("the until target needs a reach condition, not a bare "
                             "nested block", tok.line, tok.col)
        if isinstance(rhs, _And):
            refs = [a for a in rhs.args if isinstance(a, _BlockRef)]
            rest = [a for a in rhs.args if not isinstance(a, _BlockRef)]
            if len(refs) > 1:
                raise ParseError("more than one nested block in a conjunction",
                                 tok.line, tok.col)
            if refs:
                if not rest:
                    raise ParseError("the until target needs a reach condition",
                                     tok.line, tok.col)
                expr = rest[0] if len(rest) == 1 else _And(tuple(rest))
                return expr, refs[0].block_index
        self.ensure_no_blockref(rhs, tok)
        return rhs, None

    def ensure_no_blockref(self, expr, tok):
        if isinstance(expr, _BlockRef):
            raise ParseError("a nested block may only appear as the innermost "
                             "conjunct of the until target", tok.line, tok.col)
        if isinstance(expr, (_And, _Or)):
            for a in expr.args:
                self.ensure_no_blockref(a, tok)

    def to_cnf(self, expr, tok) -> tuple[Clause, ...]:
        if isinstance(expr, _True):
            return ()
        self.ensure_no_blockref(expr, tok)
        conjuncts = expr.args if isinstance(expr, _And) else (expr,)
        clauses = []
        for c in conjuncts:
            if isinstance(c, _Lit):
                clauses.append(disj(c.lit))
            elif isinstance(c, _Or) and all(isinstance(a, _Lit) for a in c.args):
                clauses.append(disj(*(a.lit for a in c.args)))
            else:
                raise ParseError("avoid side must be a CNF: a conjunction of "
                                 "disjunctions of literals", tok.line, tok.col)
        return tuple(clauses)

    def to_dnf(self, expr, tok) -> tuple[Clause, ...]:
        self.ensure_no_blockref(expr, tok)
        if isinstance(expr, _True):
            raise ParseError("the reach condition must name at least one literal",
                             tok.line, tok.col)
        disjuncts = expr.args if isinstance(expr, _Or) else (expr,)
        clauses = []
        for c in disjuncts:
            if isinstance(c, _Lit):
                clauses.append(conj(c.lit))
            elif isinstance(c, _And) and all(isinstance(a, _Lit) for a in c.args):
                clauses.append(conj(*(a.lit for a in c.args)))
            else:
                raise ParseError("reach condition must be a DNF: a disjunction of "
                                 "conjunctions of literals", tok.line, tok.col)
        return tuple(clauses)


def parse(text: str) -> Formula:
    """Parse the concrete syntax; pretty-printing the result re-parses equal."""
    return _Parser(text).parse()


def validate(f: Formula, propositions) -> list[str]:
    """Diagnostics for a formula against the scenario's proposition set."""
    known = set(propositions)
    problems = []
    for j, b in enumerate(f.blocks, start=1):
        for c in b.phi + b.psi:
            for lit in c.literals:
                if lit.base not in known:
                    problems.append(f"block {j}: unknown proposition {lit.base!r}")
    return problems


# --- specification update rules -------------------------------------------

@dataclass(frozen=True)
class UpdateRule:
    """One of the six monotone edits, applied after stripping the
    already-satisfied prefix of ``satisfied_up_to`` blocks.

    ``j`` is the 1-based block index in the formula before stripping.
    """

    kind: str
    j: int
    satisfied_up_to: int = 0
    clause: Optional[Clause] = None
    index: Optional[int] = None
    p_plus: Optional[float] = None

    def __post_init__(self):
        if self.kind not in _DIRECTION:
            raise FormulaError(f"unknown update rule kind {self.kind!r}")

    def describe(self) -> str:
        i = self.satisfied_up_to
        if self.kind == ADD_PSI_CLAUSE:
            return f"allow reaching {self.clause.text()} in step {self.j}"
        if self.kind == REMOVE_PSI_CLAUSE:
            return f"drop reach option #{self.index + 1} from step {self.j}"
        if self.kind == REMOVE_PHI_CLAUSE:
            return f"lift avoid constraint #{self.index + 1} in step {self.j}"
        if self.kind == ADD_PHI_CLAUSE:
            return f"add avoid constraint {self.clause.text()} to step {self.j}"
        if self.kind == LOWER_THRESHOLD:
            return f"lower the step-{self.j} confidence bound to {self.p_plus}"
        return f"raise the step-{self.j} confidence bound to {self.p_plus}"

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "j": self.j, "satisfied_up_to": self.satisfied_up_to}
        if self.clause is not None:
            d["clause"] = {"kind": self.clause.kind,
                           "literals": sorted(str(l) for l in self.clause.literals)}
        if self.index is not None:
            d["index"] = self.index
        if self.p_plus is not None:
            d["p_plus"] = self.p_plus
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UpdateRule":
        clause = None
        if "clause" in d:
            lits = []
            for s in d["clause"]["literals"]:
                neg = s.startswith("!")
                lits.append(ExtProp(s[1:] if neg else s, not neg))
            clause = Clause(d["clause"]["kind"], frozenset(lits))
        return cls(kind=d["kind"], j=d["j"],
                   satisfied_up_to=d.get("satisfied_up_to", 0),
                   clause=clause, index=d.get("index"), p_plus=d.get("p_plus"))


def direction(rule: UpdateRule) -> str:
    """Whether a rule is guaranteed to raise or lower every state value."""
    return _DIRECTION[rule.kind]


def apply_update(f: Formula, rule: UpdateRule) -> Formula:
    """Strip the satisfied prefix, then apply one edit to block j."""
    i, j = rule.satisfied_up_to, rule.j
    if not 0 <= i <= len(f.blocks):
        raise FormulaError(f"satisfied_up_to={i} outside [0, {len(f.blocks)}]")
    if not i < j <= len(f.blocks):
        raise FormulaError(f"target block j={j} must satisfy {i} < j <= {len(f.blocks)}")
    blocks = list(f.blocks[i:])
    jj = j - i - 1
    b = blocks[jj]

    if rule.kind == ADD_PSI_CLAUSE:
        if rule.clause is None or rule.clause.kind != "and":
            raise FormulaError("adding to the DNF side needs a conjunction clause")
        b = replace(b, psi=b.psi + (rule.clause,))
    elif rule.kind == REMOVE_PSI_CLAUSE:
        if rule.index is None or not 0 <= rule.index < len(b.psi):
            raise FormulaError(f"DNF clause index {rule.index} out of range")
        if len(b.psi) < 2:
            # stricter than the source rule's n_j >= 1 guard: an emptied DNF
            # is unsatisfiable and collapses the whole chain
            raise FormulaError("cannot remove the last reach clause of a block")
        b = replace(b, psi=b.psi[: rule.index] + b.psi[rule.index + 1:])
    elif rule.kind == REMOVE_PHI_CLAUSE:
        if rule.index is None or not 0 <= rule.index < len(b.phi):
            raise FormulaError(f"CNF clause index {rule.index} out of range")
        b = replace(b, phi=b.phi[: rule.index] + b.phi[rule.index + 1:])
    elif rule.kind == ADD_PHI_CLAUSE:
        if rule.clause is None or rule.clause.kind != "or":
            raise FormulaError("adding to the CNF side needs a disjunction clause")
        b = replace(b, phi=b.phi + (rule.clause,))
    elif rule.kind == LOWER_THRESHOLD:
        if rule.p_plus is None or not 0.0 <= rule.p_plus < b.p:
            raise FormulaError(f"lowered threshold must be in [0, {b.p})")
        b = replace(b, p=rule.p_plus)
    elif rule.kind == RAISE_THRESHOLD:
        if rule.p_plus is None or not b.p < rule.p_plus <= 1.0:
            raise FormulaError(f"raised threshold must be in ({b.p}, 1]")

        b = replace(b, p=rule.p_plus)
    blocks[jj] = b
    return Formula(tuple(blocks))
