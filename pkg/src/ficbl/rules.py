"""Expert rules: boolean expressions over concept literals.

A rule is a logic function g over literals [c_j = i], held either firmly
(pi = 1) or with probability pi.  Grammar, tightest first:

    rule  := expr ("@pi=" FLOAT)?
    expr  := iff
    iff   := impl ("<->" impl)*
    impl  := or ("->" impl)?          # right-associative
    or    := and ("|" and)*
    and   := unary ("&" unary)*
    unary := "!" unary | atom
    atom  := IDENT "=" INT | "(" expr ")"

IDENT is a concept name from the schema or the alias c<index>.  An
implication F -> G evaluates as (not F) or G.
"""

import re
from dataclasses import dataclass, field

from .concepts import Combination, ConceptSchema
from .errors import FicblError, RuleSyntaxError


@dataclass(frozen=True)
class Lit:
    concept: int
    value: int


@dataclass(frozen=True)
class Not:
    operand: "Node"


@dataclass(frozen=True)
class And:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Or:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Implies:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Iff:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Const:
    value: bool


Node = Lit | Not | And | Or | Implies | Iff | Const


@dataclass(frozen=True)
class Rule:
    """Expression tree plus the probability that the rule holds."""

    expr: Node
    pi: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.pi <= 1.0:
            raise FicblError(f"rule probability must lie in (0, 1], got {self.pi}")

    @property
    def is_hard(self) -> bool:
        return self.pi == 1.0

    @property
    def is_constant_true(self) -> bool:
        return isinstance(self.expr, Const) and self.expr.value


TRUE_RULE = Rule(Const(True))


def _eval_node(node: Node, z: Combination) -> bool:
    if isinstance(node, Lit):
        return z[node.concept] == node.value
    if isinstance(node, Not):
        return not _eval_node(node.operand, z)
    if isinstance(node, And):
        return _eval_node(node.left, z) and _eval_node(node.right, z)
    if isinstance(node, Or):
        return _eval_node(node.left, z) or _eval_node(node.right, z)
    if isinstance(node, Implies):
        return (not _eval_node(node.left, z)) or _eval_node(node.right, z)
    if isinstance(node, Iff):
        return _eval_node(node.left, z) == _eval_node(node.right, z)
    if isinstance(node, Const):
        return node.value
    raise TypeError(f"unexpected rule node {node!r}")


def eval_rule(rule: Rule, z: Combination) -> int:
    """Boolean value of the rule on a full combination: 1 TRUE, 0 FALSE."""
    return 1 if _eval_node(rule.expr, z) else 0


def truth_prob(rule: Rule, z: Combination) -> float:
    """Probability the rule holds at z: pi when satisfied, 1 - pi when not."""
    return rule.pi if _eval_node(rule.expr, z) else 1.0 - rule.pi


def conjoin(rules: list[Rule]) -> Rule:
    """Fold hard rules into one conjunction; empty input means TRUE."""
    for r in rules:
        if not r.is_hard:
            raise FicblError("only hard rules (pi = 1) may be conjoined")
    if not rules:
        return TRUE_RULE
    expr = rules[0].expr
    for r in rules[1:]:
        expr = And(expr, r.expr)
    return Rule(expr)


def combine_rules(rules: list[Rule]) -> Rule:
    """Reduce a rule list to the single rule driving probability updates.

    Several hard rules conjoin; a single soft rule passes through; mixing
    soft rules with anything else has no defined semantics and is rejected.
    """
    if not rules:
        return TRUE_RULE
    if len(rules) == 1:
        return rules[0]
    return conjoin(rules)


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<iff><->)|(?P<impl>->)|(?P<op>[!&|()=])"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<int>\d+))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            raise RuleSyntaxError(f"unexpected character {stripped[0]!r}", pos)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    return tokens


@dataclass
class _Parser:
    schema: ConceptSchema
    tokens: list
    text: str
    pos: int = field(default=0)

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None, len(self.text))

    def take(self, kind=None, value=None):
        tok = self.peek()
        if tok[0] is None:
            raise RuleSyntaxError("unexpected end of rule", tok[2])
        if kind is not None and tok[0] != kind:
            raise RuleSyntaxError(f"expected {value or kind}, found {tok[1]!r}", tok[2])
        if value is not None and tok[1] != value:
            raise RuleSyntaxError(f"expected {value!r}, found {tok[1]!r}", tok[2])
        self.pos += 1
        return tok

    def parse_expr(self) -> Node:
        return self.parse_iff()

    def parse_iff(self) -> Node:
        node = self.parse_impl()
        while self.peek()[0] == "iff":
            self.take("iff")
            node = Iff(node, self.parse_impl())
        return node

    def parse_impl(self) -> Node:
        node = self.parse_or()
        if self.peek()[0] == "impl":
            self.take("impl")
            node = Implies(node, self.parse_impl())
        return node

    def parse_or(self) -> Node:
        node = self.parse_and()
        while self.peek()[:2] == ("op", "|"):
            self.take("op", "|")
            node = Or(node, self.parse_and())
        return node

    def parse_and(self) -> Node:
        node = self.parse_unary()
        while self.peek()[:2] == ("op", "&"):
            self.take("op", "&")
            node = And(node, self.parse_unary())
        return node

    def parse_unary(self) -> Node:
        if self.peek()[:2] == ("op", "!"):
            self.take("op", "!")
            return Not(self.parse_unary())
        return self.parse_atom()

    def parse_atom(self) -> Node:
        kind, value, at = self.peek()
        if kind == "op" and value == "(":
            self.take("op", "(")
            node = self.parse_expr()
            self.take("op", ")")
            return node
        if kind == "ident":
            self.take("ident")
            try:
                concept = self.schema.index_of(value)
            except FicblError as exc:
                raise RuleSyntaxError(str(exc), at) from None
            self.take("op", "=")
            tok = self.take("int")
            v = int(tok[1])
            if not 1 <= v <= self.schema.cardinalities[concept]:
                raise RuleSyntaxError(
                    f"value {v} out of range 1..{self.schema.cardinalities[concept]} "
                    f"for concept {self.schema.names[concept]}",
                    tok[2],
                )
            return Lit(concept, v)
        raise RuleSyntaxError(f"expected a literal or '(', found {value!r}", at)


def parse_rule(text: str, schema: ConceptSchema) -> Rule:
    """Parse one rule, optionally suffixed with @pi=<probability>."""
    if not text or not text.strip():
        raise RuleSyntaxError("empty rule", 0)
    body, pi = text, 1.0
    at = text.find("@pi=")
    if at >= 0:
        body = text[:at]
        tail = text[at + 4 :].strip()
        try:
            pi = float(tail)
        except ValueError:
            raise RuleSyntaxError(f"bad probability {tail!r}", at + 4) from None
        if not 0.0 < pi <= 1.0:
            raise RuleSyntaxError(f"probability {pi} outside (0, 1]", at + 4)
    parser = _Parser(schema, _tokenize(body), body)
    expr = parser.parse_expr()
    kind, value, pos = parser.peek()
    if kind is not None:
        raise RuleSyntaxError(f"trailing input {value!r}", pos)
    return Rule(expr, pi)


def parse_rules_text(text: str, schema: ConceptSchema) -> list[Rule]:
    """Parse a rules file body: one rule per line, '#' starts a comment."""
    rules = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rules.append(parse_rule(line, schema))
    return rules


_PRECEDENCE = {Iff: 1, Implies: 2, Or: 3, And: 4, Not: 5, Lit: 6, Const: 6}


def _format(node: Node, schema: ConceptSchema, parent_level: int) -> str:
    level = _PRECEDENCE[type(node)]
    if isinstance(node, Lit):
        text = f"{schema.names[node.concept]}={node.value}"
    elif isinstance(node, Const):
        text = "TRUE" if node.value else "FALSE"
    elif isinstance(node, Not):
        text = "!" + _format(node.operand, schema, level)
    elif isinstance(node, And):
        text = f"{_format(node.left, schema, level)} & {_format(node.right, schema, level + 1)}"
    elif isinstance(node, Or):
        text = f"{_format(node.left, schema, level)} | {_format(node.right, schema, level + 1)}"
    elif isinstance(node, Implies):
        # right-associative: parenthesize a nested implication on the left
        text = f"{_format(node.left, schema, level + 1)} -> {_format(node.right, schema, level)}"
    else:
        text = f"{_format(node.left, schema, level)} <-> {_format(node.right, schema, level + 1)}"
    if level < parent_level:
        return f"({text})"
    return text


def format_rule(rule: Rule, schema: ConceptSchema) -> str:
    """Render a rule in the DSL; parsing the result reproduces the rule."""
    text = _format(rule.expr, schema, 0)
    if rule.pi != 1.0:
        text += f" @pi={rule.pi!r}"
    return text
