"""Model-formula DSL: lexer, recursive-descent parser, and term expansion.

Two parsing modes share one tokenizer. Linear formulas know `+`, `:`, the
`a*b` shorthand, group terms `(expr | g)` / `(expr |ID| g)`, and the call
whitelist {cs, dec, thres}. Non-linear expressions (after `nl = true`) treat
`+ - * / ^` as arithmetic, with calls {exp, log, inv_logit}; interaction
syntax is not valid there, and `*` is never interaction inside them.

Every parse failure raises ParseError carrying the byte offset.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field


class ParseError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


# AST nodes -----------------------------------------------------------------

@dataclass(frozen=True)
class Sym:
    name: str
    pos: int = 0


@dataclass(frozen=True)
class Num:
    value: float
    pos: int = 0


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple = ()
    kwargs: tuple = ()  # of (name, node) pairs
    pos: int = 0


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object
    pos: int = 0


@dataclass(frozen=True)
class GroupTerm:
    inner: object
    factor: str
    corr_id: str | None
    pos: int = 0


@dataclass(frozen=True)
class Response:
    name: str
    addition: tuple = ()  # Call nodes: dec(col), thres(gr=col)


@dataclass(frozen=True)
class FormulaAST:
    response: Response | None
    rhs: object
    text: str = ""


# term-level structures -----------------------------------------------------

@dataclass(frozen=True)
class GroupSpec:
    intercept: bool
    terms: tuple  # tuples of column names
    factor: str
    corr_id: str | None


@dataclass
class TermList:
    intercept: bool = True
    population_terms: list = field(default_factory=list)
    cs_terms: list = field(default_factory=list)
    group_terms: list = field(default_factory=list)


@dataclass
class ModelFormula:
    response: Response | None
    nonlinear: bool
    rhs: object  # linear rhs AST, or the non-linear expression AST
    dpar_formulas: dict  # name -> FormulaAST (dpars and nlpars alike)
    nlf_defs: dict  # name -> expression AST, declaration order
    fixed_dpars: dict  # name -> float


# lexer ---------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*|\.\d+|\d+)|(?P<name>[A-Za-z_.][A-Za-z0-9_.]*)|(?P<op>[~+*:|()=^/,-]))"
)


def tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup is None and m.end() == len(text):
            break
        if m.group("num") is not None:
            tokens.append(("NUM", m.group("num"), m.start("num")))
        elif m.group("name") is not None:
            tokens.append(("NAME", m.group("name"), m.start("name")))
        elif m.group("op") is not None:
            tokens.append(("OP", m.group("op"), m.start("op")))
        pos = m.end()
        if m.end() == m.start():  # only whitespace remained
            break
    tokens.append(("EOF", "", len(text)))
    return tokens


LINEAR_CALLS = {"cs"}
ADDITION_CALLS = {"dec", "thres"}
NL_CALLS = {"exp", "log", "inv_logit"}


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, text, pos = self.peek()
        if kind != "OP" or text != op:
            raise ParseError(f"expected '{op}'", pos)
        return self.next()

    def at_op(self, *ops):
        kind, text, _ = self.peek()
        return kind == "OP" and text in ops

    def done(self):
        kind, text, pos = self.peek()
        if kind != "EOF":
            raise ParseError(f"unexpected '{text}'", pos)

    # response side ---------------------------------------------------------

    def parse_response(self):
        kind, text, pos = self.next()
        if kind != "NAME":
            raise ParseError("expected response name", pos)
        name = text
        addition = []
        while self.at_op("|"):
            self.next()
            addition.append(self.parse_addition_call())
        return Response(name, tuple(addition))

    def parse_addition_call(self):
        kind, text, pos = self.next()
        if kind != "NAME" or text not in ADDITION_CALLS:
            raise ParseError(f"expected one of {sorted(ADDITION_CALLS)} after '|'", pos)
        self.expect_op("(")
        if text == "dec":
            k, col, cpos = self.next()
            if k != "NAME":
                raise ParseError("dec() expects a column name", cpos)
            node = Call("dec", (Sym(col, cpos),), (), pos)
        else:
            k, key, kpos = self.next()
            if k != "NAME" or key != "gr":
                raise ParseError("thres() expects gr=<column>", kpos)
            self.expect_op("=")
            k, col, cpos = self.next()
            if k != "NAME":
                raise ParseError("thres(gr=...) expects a column name", cpos)
            node = Call("thres", (), (("gr", Sym(col, cpos)),), pos)
        self.expect_op(")")
        return node

    # linear right-hand side ------------------------------------------------

    def parse_sum(self):
        node = self.parse_star()
        while self.at_op("+"):
            _, _, pos = self.next()
            right = self.parse_star()
            node = BinOp("+", node, right, pos)
        return node

    def parse_star(self):
        node = self.parse_colon()
        while self.at_op("*"):
            _, _, pos = self.next()
            right = self.parse_colon()
            node = BinOp("*", node, right, pos)
        return node

    def parse_colon(self):
        node = self.parse_primary()
        while self.at_op(":"):
            _, _, pos = self.next()
            right = self.parse_primary()
            node = BinOp(":", node, right, pos)
        return node

    def parse_primary(self):
        kind, text, pos = self.peek()
        if kind == "NUM":
            self.next()
            return Num(float(text), pos)
        if kind == "NAME":
            self.next()
            if self.at_op("("):
                if text not in LINEAR_CALLS:
                    raise ParseError(f"unknown call '{text}' in linear formula", pos)
                self.next()
                inner = self.parse_sum()
                self.expect_op(")")
                return Call(text, (inner,), (), pos)
            return Sym(text, pos)
        if kind == "OP" and text == "(":
            self.next()
            inner = self.parse_sum()
            if self.at_op("|"):
                self.next()
                corr_id = None
                k1, t1, p1 = self.peek()
                if k1 == "NAME":
                    self.next()
                    if self.at_op("|"):
                        self.next()
                        k2, t2, p2 = self.peek()
                        if k2 != "NAME":
                            raise ParseError("expected grouping factor name", p2)
                        self.next()
                        corr_id, factor = t1, t2
                    else:
                        factor = t1
                else:
                    raise ParseError("expected grouping factor name", p1)
                self.expect_op(")")
                return GroupTerm(inner, factor, corr_id, pos)
            self.expect_op(")")
            return inner
        raise ParseError("expected a term", pos)

    # non-linear expressions ------------------------------------------------

    def parse_nl(self):
        node = self.parse_nl_prod()
        while self.at_op("+", "-"):
            _, op, pos = self.next()
            right = self.parse_nl_prod()
            node = BinOp(op, node, right, pos)
        return node

    def parse_nl_prod(self):
        node = self.parse_nl_pow()
        while self.at_op("*", "/"):
            _, op, pos = self.next()
            right = self.parse_nl_pow()
            node = BinOp(op, node, right, pos)
        return node

    def parse_nl_pow(self):
        node = self.parse_nl_unary()
        if self.at_op("^"):
            _, _, pos = self.next()
            right = self.parse_nl_pow()  # right associative
            node = BinOp("^", node, right, pos)
        return node

    def parse_nl_unary(self):
        if self.at_op("-"):
            _, _, pos = self.next()
            return BinOp("-", Num(0.0, pos), self.parse_nl_unary(), pos)
        return self.parse_nl_atom()

    def parse_nl_atom(self):
        kind, text, pos = self.peek()
        if kind == "NUM":
            self.next()
            return Num(float(text), pos)
        if kind == "NAME":
            self.next()
            if self.at_op("("):
                if text not in NL_CALLS:
                    raise ParseError(f"unknown call '{text}' in non-linear expression", pos)
                self.next()
                inner = self.parse_nl()
                self.expect_op(")")
                return Call(text, (inner,), (), pos)
            return Sym(text, pos)
        if kind == "OP" and text == "(":
            self.next()
            inner = self.parse_nl()
            self.expect_op(")")
            return inner
        raise ParseError("expected an expression", pos)


def parse_formula(text):
    """Parse one linear formula line into response + rhs AST."""
    parser = _Parser(text)
    response = parser.parse_response()
    parser.expect_op("~")
    rhs = parser.parse_sum()
    parser.done()
    return FormulaAST(response, rhs, text)


def _parse_nl_main(text):
    parser = _Parser(text)
    response = parser.parse_response()
    parser.expect_op("~")
    expr = parser.parse_nl()
    parser.done()
    return FormulaAST(response, expr, text)


def _parse_nlf(text, pos_base):
    # inside of nlf( name ~ expr )
    parser = _Parser(text)
    kind, name, pos = parser.next()
    if kind != "NAME":
        raise ParseError("nlf() expects 'name ~ expression'", pos_base + pos)
    parser.expect_op("~")
    expr = parser.parse_nl()
    parser.done()
    return name, expr


# expansion -----------------------------------------------------------------

def _cross(left, right):
    return [a + b for a in left for b in right]


def _expand_product(node):
    """Expand a term node to a list of name tuples (desugaring `*`)."""
    if isinstance(node, Sym):
        return [(node.name,)]
    if isinstance(node, BinOp):
        if node.op == ":":
            return _cross(_expand_product(node.left), _expand_product(node.right))
        if node.op == "*":
            left = _expand_product(node.left)
            right = _expand_product(node.right)
            return left + right + _cross(left, right)
        if node.op == "+":
            return _expand_product(node.left) + _expand_product(node.right)
    if isinstance(node, Num):
        raise ParseError("numeric literal inside an interaction", node.pos)
    raise ParseError("unsupported term", getattr(node, "pos", 0))


def _sum_elements(node):
    if isinstance(node, BinOp) and node.op == "+":
        return _sum_elements(node.left) + _sum_elements(node.right)
    return [node]


def expand_terms(ast):
    """Separate an rhs into intercept flag, population, cs, and group terms."""
    out = TermList()
    for element in _sum_elements(ast.rhs if isinstance(ast, FormulaAST) else ast):
        if isinstance(element, Num):
            if element.value == 0:
                out.intercept = False
            elif element.value != 1:
                raise ParseError("only 0 and 1 are valid bare numbers", element.pos)
            continue
        if isinstance(element, Call) and element.func == "cs":
            out.cs_terms.extend(_expand_product(element.args[0]))
            continue
        if isinstance(element, GroupTerm):
            inner = TermList()
            for sub in _sum_elements(element.inner):
                if isinstance(sub, Num):
                    if sub.value == 0:
                        inner.intercept = False
                    elif sub.value != 1:
                        raise ParseError("only 0 and 1 are valid bare numbers", sub.pos)
                elif isinstance(sub, (Call, GroupTerm)):
                    raise ParseError("calls and nested group terms are not allowed inside group terms",
                                     sub.pos)
                else:
                    inner.population_terms.extend(_expand_product(sub))
            if any(g.factor == element.factor for g in out.group_terms):
                raise ParseError(
                    f"duplicate group term on factor '{element.factor}'", element.pos)
            out.group_terms.append(
                GroupSpec(inner.intercept, tuple(_dedup(inner.population_terms)),
                          element.factor, element.corr_id))
            continue
        out.population_terms.extend(_expand_product(element))
    out.population_terms = _dedup(out.population_terms)
    out.cs_terms = _dedup(out.cs_terms)
    overlap = set(out.population_terms) & set(out.cs_terms)
    if overlap:
        raise ParseError(
            f"terms appear both as population and cs(): {sorted(overlap)}", 0)
    return out


def _dedup(seq):
    seen = set()
    out = []
    for item in seq:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return out


# model blocks --------------------------------------------------------------

_FIXED_RE = re.compile(r"^\s*([A-Za-z_.][A-Za-z0-9_.]*)\s*=\s*([-+0-9.eE]+)\s*$")
_NLF_RE = re.compile(r"^\s*nlf\((.*)\)\s*$")


def parse_model(lines, nl=False, data_columns=()):
    """Parse a model block: main formula first, then dpar/nlpar formulas,
    nlf() derived quantities, and `name = constant` fixings."""
    if isinstance(lines, str):
        lines = lines.splitlines()
    lines = [ln for ln in (l.strip() for l in lines) if ln]
    if not lines:
        raise ParseError("empty model block", 0)
    dpar_formulas = {}
    nlf_defs = {}
    fixed = {}
    for line in lines[1:]:
        m = _NLF_RE.match(line)
        if m:
            name, expr = _parse_nlf(m.group(1), line.index("(") + 1)
            if name in nlf_defs or name in dpar_formulas:
                raise ParseError(f"duplicate definition of '{name}'", 0)
            nlf_defs[name] = expr
            continue
        m = _FIXED_RE.match(line)
        if m:
            fixed[m.group(1)] = float(m.group(2))
            continue
        sub = parse_formula(line)
        name = sub.response.name
        if name in dpar_formulas or name in nlf_defs:
            raise ParseError(f"duplicate formula for '{name}'", 0)
        if sub.response.addition:
            raise ParseError("addition terms are only valid on the main formula", 0)
        dpar_formulas[name] = sub
    if nl:
        main = _parse_nl_main(lines[0])
        known = set(dpar_formulas) | set(nlf_defs) | set(data_columns)
        for expr in [main.rhs] + list(nlf_defs.values()):
            for sym in _free_symbols(expr):
                if sym not in known:
                    raise ParseError(
                        f"'{sym}' is used as a non-linear parameter but never defined", 0)
    else:
        main = parse_formula(lines[0])
    if set(fixed) & set(dpar_formulas):
        both = sorted(set(fixed) & set(dpar_formulas))
        raise ParseError(f"parameters both fixed and given formulas: {both}", 0)
    model = ModelFormula(main.response, nl, main.rhs, dpar_formulas, nlf_defs, fixed)
    _check_corr_ids(model)
    return model


def _group_nodes(node):
    if isinstance(node, GroupTerm):
        yield node
    elif isinstance(node, BinOp):
        yield from _group_nodes(node.left)
        yield from _group_nodes(node.right)
    elif isinstance(node, Call):
        for arg in node.args:
            yield from _group_nodes(arg)


def _check_corr_ids(model):
    # one corr_id symbol may only ever join terms on a single grouping factor
    factor_of = {}
    rhss = [] if model.nonlinear else [model.rhs]
    rhss += [f.rhs for f in model.dpar_formulas.values()]
    for rhs in rhss:
        for g in _group_nodes(rhs):
            if g.corr_id is None:
                continue
            prior = factor_of.setdefault(g.corr_id, g.factor)
            if prior != g.factor:
                raise ParseError(
                    f"correlation id '{g.corr_id}' used on different grouping "
                    f"factors '{prior}' and '{g.factor}'", g.pos)


def _free_symbols(node):
    if isinstance(node, Sym):
        yield node.name
    elif isinstance(node, BinOp):
        yield from _free_symbols(node.left)
        yield from _free_symbols(node.right)
    elif isinstance(node, Call):
        for arg in node.args:
            yield from _free_symbols(arg)
        for _, arg in node.kwargs:
            yield from _free_symbols(arg)


def format_formula(ast):
    """Round-trip printer; expand_terms(parse(format(ast))) == expand_terms(ast)."""

    def fmt(node):
        if isinstance(node, Num):
            return str(int(node.value)) if node.value == int(node.value) else str(node.value)
        if isinstance(node, Sym):
            return node.name
        if isinstance(node, Call):
            inner = ", ".join(
                [fmt(a) for a in node.args] + [f"{k} = {fmt(v)}" for k, v in node.kwargs])
            return f"{node.func}({inner})"
        if isinstance(node, GroupTerm):
            bar = f"|{node.corr_id}|" if node.corr_id else "|"
            return f"({fmt(node.inner)} {bar} {node.factor})"
        if isinstance(node, BinOp):
            if node.op == "+":
                return f"{fmt(node.left)} + {fmt(node.right)}"
            left = fmt(node.left)
            right = fmt(node.right)
            if isinstance(node.left, BinOp) and node.left.op == "+":
                left = f"({left})"
            if isinstance(node.right, BinOp) and node.right.op == "+":
                right = f"({right})"
            return f"{left} {node.op} {right}"
        raise TypeError(f"cannot format {node!r}")

    if isinstance(ast, FormulaAST) and ast.response is not None:
        resp = ast.response.name
        for call in ast.response.addition:
            resp += f" | {fmt(call)}"
        return f"{resp} ~ {fmt(ast.rhs)}"
    return fmt(ast.rhs if isinstance(ast, FormulaAST) else ast)
