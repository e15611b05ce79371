"""Annotated linear-algebra equations.

The input language covers equations over named matrix operands with declared
structure (general, triangular, symmetric, SPD) and role (input / output).
This module owns parsing, shape/structure derivation, and symbolic operand
partitioning with structure inheritance.

Input file format (UTF-8 text, `#` starts a comment):

    Equation: <expr> = <expr>
    <Name>: Matrix(<dim>,<dim>), <structure>, <role>

    expr   := term (('+'|'-') term)*
    term   := factor ('*' factor)*
    factor := Name | Name '^T' | '(' expr ')' | '-' factor
"""

from dataclasses import dataclass, field
from enum import Enum

from .errors import (
    DeclarationError,
    LaSyntaxError,
    PartitionError,
    ShapeError,
    StructureError,
)


# --------------------------------------------------------------------------- #
# Domain types
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class Dim:
    """Matrix extent: either a symbolic name or a concrete positive count."""

    name: str = None
    value: int = None

    def __post_init__(self):
        if (self.name is None) == (self.value is None):
            raise ValueError("Dim is either symbolic or concrete")
        if self.value is not None and self.value < 1:
            raise ValueError("concrete Dim must be >= 1")

    def __str__(self):
        return self.name if self.name is not None else str(self.value)


class Structure(str, Enum):
    GENERAL = "general"
    LOWER_TRIANGULAR = "lower_triangular"
    UPPER_TRIANGULAR = "upper_triangular"
    SYMMETRIC = "symmetric"
    SPD = "spd"
    ZERO = "zero"
    IDENTITY = "identity"

    def is_symmetric(self):
        # spd implies symmetric for every property query
        return self in (Structure.SYMMETRIC, Structure.SPD,
                        Structure.ZERO, Structure.IDENTITY)

    def is_triangular(self):
        return self in (Structure.LOWER_TRIANGULAR, Structure.UPPER_TRIANGULAR)

    def transposed(self):
        if self is Structure.LOWER_TRIANGULAR:
            return Structure.UPPER_TRIANGULAR
        if self is Structure.UPPER_TRIANGULAR:
            return Structure.LOWER_TRIANGULAR
        return self


DECLARABLE_STRUCTURES = (
    Structure.GENERAL,
    Structure.LOWER_TRIANGULAR,
    Structure.UPPER_TRIANGULAR,
    Structure.SYMMETRIC,
    Structure.SPD,
)

ROLES = ("input", "output")


@dataclass(frozen=True)
class Operand:
    name: str
    rows: Dim
    cols: Dim
    structure: Structure
    role: str

    def __post_init__(self):
        if self.structure not in (Structure.GENERAL, Structure.ZERO,
                                  Structure.IDENTITY) and self.rows != self.cols:
            raise StructureError(
                f"operand {self.name}: {self.structure.value} requires a square shape")

    @property
    def is_output(self):
        return self.role == "output"


# Expression nodes are immutable values; identical subtrees compare equal,
# which the annotation and canonicalization layers rely on.

@dataclass(frozen=True)
class Ref:
    name: str


@dataclass(frozen=True)
class Transpose:
    arg: "Expr"


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class Add:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Sub:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Mul:
    left: "Expr"
    right: "Expr"


Expr = (Ref, Transpose, Neg, Add, Sub, Mul)


@dataclass(frozen=True)
class Equation:
    name: str
    lhs: "Expr"
    rhs: "Expr"
    operands: tuple
    unknowns: frozenset

    def operand(self, name):
        for op in self.operands:
            if op.name == name:
                return op
        raise KeyError(name)

    @property
    def operand_map(self):
        return {op.name: op for op in self.operands}


@dataclass(frozen=True)
class Quadrant:
    """One cell of a partitioned operand.

    `alias` names a sibling quadrant; when set, this quadrant is never stored:
    reads of it are transposed reads of the sibling.
    """

    label: str
    structure: Structure
    rows: Dim
    cols: Dim
    alias: str = None


@dataclass(frozen=True)
class PartitionedOperand:
    base: Operand
    grid: str  # "1x1" | "1x2" | "2x1" | "2x2"
    quadrants: tuple  # of Quadrant, row-major

    def quadrant(self, label):
        for q in self.quadrants:
            if q.label == label:
                return q
        raise KeyError(label)


# --------------------------------------------------------------------------- #
# Parsing
# --------------------------------------------------------------------------- #

_PUNCT = ("^T", "(", ")", "+", "-", "*", "=", ":", ",")


def _tokenize(text):
    tokens = []
    line = 1
    col = 1
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch == "\n":
            tokens.append(("NEWLINE", "\n", line, col))
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        matched = None
        for p in _PUNCT:
            if text.startswith(p, i):
                matched = p
                break
        if matched:
            tokens.append(("PUNCT", matched, line, col))
            i += len(matched)
            col += len(matched)
            continue
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            tokens.append(("INT", text[i:j], line, col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("NAME", text[i:j], line, col))
            col += j - i
            i = j
            continue
        raise LaSyntaxError(f"unexpected character {ch!r}", line, col)
    tokens.append(("EOF", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        raise LaSyntaxError(message, tok[2], tok[3])

    def expect(self, value):
        tok = self.next()
        if tok[1] != value:
            self.error(f"expected {value!r}, found {tok[1] or 'end of input'!r}", tok)
        return tok

    def skip_newlines(self):
        while self.peek()[0] == "NEWLINE":
            self.next()

    def at_line_end(self):
        return self.peek()[0] in ("NEWLINE", "EOF")

    # expr := term (('+'|'-') term)*
    def parse_expr(self):
        node = self.parse_term()
        while self.peek()[1] in ("+", "-"):
            op = self.next()[1]
            rhs = self.parse_term()
            node = Add(node, rhs) if op == "+" else Sub(node, rhs)
        return node

    # term := factor ('*' factor)*
    def parse_term(self):
        node = self.parse_factor()
        while self.peek()[1] == "*":
            self.next()
            node = Mul(node, self.parse_factor())
        return node

    # factor := Name | Name '^T' | '(' expr ')' | '-' factor
    def parse_factor(self):
        tok = self.peek()
        if tok[1] == "-":
            self.next()
            return Neg(self.parse_factor())
        if tok[1] == "(":
            self.next()
            node = self.parse_expr()
            self.expect(")")
            return node
        if tok[0] == "NAME":
            self.next()
            node = Ref(tok[1])
            if self.peek()[1] == "^T":
                self.next()
                node = Transpose(node)
            return node
        self.error(f"expected an operand name, found {tok[1] or 'end of input'!r}", tok)


def _parse_dim(parser, dims):
    tok = parser.next()
    if tok[0] == "INT":
        return Dim(value=int(tok[1]))
    if tok[0] == "NAME":
        return dims.setdefault(tok[1], Dim(name=tok[1]))
    parser.error("expected a dimension (name or integer)", tok)


def parse_equation(text, name="eq"):
    """Parse annotated-equation source into an `Equation`.

    Parsing is total over the grammar: the result carries the full expression
    trees, every declared operand, and the collected unknown set.  Shape and
    structure consistency is checked separately by `check_properties`.
    """
    parser = _Parser(_tokenize(text))
    lhs = rhs = None
    operands = []
    seen = {}
    dims = {}

    while parser.peek()[0] != "EOF":
        parser.skip_newlines()
        if parser.peek()[0] == "EOF":
            break
        tok = parser.next()
        if tok[0] != "NAME":
            parser.error("expected 'Equation:' or an operand declaration", tok)
        parser.expect(":")
        if tok[1] == "Equation":
            if lhs is not None:
                raise LaSyntaxError("duplicate Equation line", tok[2], tok[3])
            lhs = parser.parse_expr()
            parser.expect("=")
            rhs = parser.parse_expr()
        else:
            parser.expect("Matrix")
            parser.expect("(")
            rows = _parse_dim(parser, dims)
            parser.expect(",")
            cols = _parse_dim(parser, dims)
            parser.expect(")")
            parser.expect(",")
            struct_tok = parser.next()
            try:
                structure = Structure(struct_tok[1])
            except ValueError:
                parser.error(f"unknown structure {struct_tok[1]!r}", struct_tok)
            if structure not in DECLARABLE_STRUCTURES:
                parser.error(f"structure {struct_tok[1]!r} is not declarable", struct_tok)
            parser.expect(",")
            role_tok = parser.next()
            if role_tok[1] not in ROLES:
                parser.error(f"unknown role {role_tok[1]!r}", role_tok)
            if tok[1] in seen:
                raise DeclarationError(f"operand {tok[1]!r} declared twice")
            op = Operand(tok[1], rows, cols, structure, role_tok[1])
            seen[tok[1]] = op
            operands.append(op)
        if not parser.at_line_end():
            parser.error("unexpected trailing tokens on line")

    if lhs is None:
        raise DeclarationError("input contains no Equation line")
    if not operands:
        raise DeclarationError("input declares no operands")

    for ref in _collect_refs(lhs) | _collect_refs(rhs):
        if ref not in seen:
            raise DeclarationError(f"operand {ref!r} used but not declared")

    unknowns = frozenset(op.name for op in operands if op.is_output)
    if not unknowns:
        raise DeclarationError("no output operand declared")
    used = _collect_refs(lhs) | _collect_refs(rhs)
    for u in unknowns:
        if u not in used:
            raise DeclarationError(f"output operand {u!r} does not appear in the equation")

    return Equation(name, lhs, rhs, tuple(operands), unknowns)


def _collect_refs(expr):
    if isinstance(expr, Ref):
        return {expr.name}
    if isinstance(expr, (Transpose, Neg)):
        return _collect_refs(expr.arg)
    return _collect_refs(expr.left) | _collect_refs(expr.right)


# --------------------------------------------------------------------------- #
# Pretty printing (round-trips through parse_equation)
# --------------------------------------------------------------------------- #

def format_expr(expr, parent_prec=0):
    if isinstance(expr, Ref):
        return expr.name
    if isinstance(expr, Transpose):
        if not isinstance(expr.arg, Ref):
            # grammar only allows ^T on names; parenthesized transposes are
            # produced internally and must be normalized before printing
            raise ValueError("cannot print transpose of a non-atomic expression")
        return f"{expr.arg.name}^T"
    if isinstance(expr, Neg):
        return f"-{format_expr(expr.arg, 3)}"
    if isinstance(expr, Mul):
        text = f"{format_expr(expr.left, 2)} * {format_expr(expr.right, 3)}"
        return f"({text})" if parent_prec >= 3 else text
    op = "+" if isinstance(expr, Add) else "-"
    text = f"{format_expr(expr.left, 1)} {op} {format_expr(expr.right, 2)}"
    return f"({text})" if parent_prec >= 2 else text


def format_equation(eq):
    lines = [f"Equation: {format_expr(eq.lhs)} = {format_expr(eq.rhs)}"]
    for op in eq.operands:
        lines.append(f"{op.name}: Matrix({op.rows},{op.cols}), "
                     f"{op.structure.value}, {op.role}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------- #
# Shape and structure derivation
# --------------------------------------------------------------------------- #

def transpose_normal(expr, operand_map):
    """Push transposes to the leaves and drop the ones that do nothing.

    Transposes of symmetric operands vanish; double transposes cancel.  The
    result only carries Transpose nodes directly on non-symmetric refs.
    """
    if isinstance(expr, Ref):
        return expr
    if isinstance(expr, Neg):
        return Neg(transpose_normal(expr.arg, operand_map))
    if isinstance(expr, Add):
        return Add(transpose_normal(expr.left, operand_map),
                   transpose_normal(expr.right, operand_map))
    if isinstance(expr, Sub):
        return Sub(transpose_normal(expr.left, operand_map),
                   transpose_normal(expr.right, operand_map))
    if isinstance(expr, Mul):
        return Mul(transpose_normal(expr.left, operand_map),
                   transpose_normal(expr.right, operand_map))
    arg = expr.arg
    if isinstance(arg, Ref):
        op = operand_map.get(arg.name)
        if op is not None and op.structure.is_symmetric():
            return arg
        return Transpose(arg)
    if isinstance(arg, Transpose):
        return transpose_normal(arg.arg, operand_map)
    if isinstance(arg, Neg):
        return Neg(transpose_normal(Transpose(arg.arg), operand_map))
    if isinstance(arg, Add):
        return Add(transpose_normal(Transpose(arg.left), operand_map),
                   transpose_normal(Transpose(arg.right), operand_map))
    if isinstance(arg, Sub):
        return Sub(transpose_normal(Transpose(arg.left), operand_map),
                   transpose_normal(Transpose(arg.right), operand_map))
    # (A B)^T = B^T A^T
    return Mul(transpose_normal(Transpose(arg.right), operand_map),
               transpose_normal(Transpose(arg.left), operand_map))


def derive_shape(expr, operand_map):
    """Derived (rows, cols) of a node; raises ShapeError on nonconformance."""
    if isinstance(expr, Ref):
        op = operand_map[expr.name]
        return (op.rows, op.cols)
    if isinstance(expr, Transpose):
        r, c = derive_shape(expr.arg, operand_map)
        return (c, r)
    if isinstance(expr, Neg):
        return derive_shape(expr.arg, operand_map)
    lr, lc = derive_shape(expr.left, operand_map)
    rr, rc = derive_shape(expr.right, operand_map)
    if isinstance(expr, Mul):
        if lc != rr:
            raise ShapeError(
                f"nonconforming product: ({lr} x {lc}) * ({rr} x {rc})")
        return (lr, rc)
    if (lr, lc) != (rr, rc):
        kind = "sum" if isinstance(expr, Add) else "difference"
        raise ShapeError(
            f"nonconforming {kind}: ({lr} x {lc}) vs ({rr} x {rc})")
    return (lr, lc)


def derive_structure(expr, operand_map):
    """Structure of a node derivable from declared operand structures."""
    if isinstance(expr, Ref):
        return operand_map[expr.name].structure
    if isinstance(expr, Transpose):
        return derive_structure(expr.arg, operand_map).transposed()
    if isinstance(expr, Neg):
        s = derive_structure(expr.arg, operand_map)
        return s if s is not Structure.IDENTITY else Structure.GENERAL
    left = derive_structure(expr.left, operand_map)
    right = derive_structure(expr.right, operand_map)
    if isinstance(expr, Mul):
        if Structure.ZERO in (left, right):
            return Structure.ZERO
        if left is Structure.IDENTITY:
            return right
        if right is Structure.IDENTITY:
            return left
        if left == right and left.is_triangular():
            return left
        # X^T X is symmetric for any X
        norm = transpose_normal(expr, operand_map)
        if (isinstance(norm, Mul)
                and transpose_normal(Transpose(norm.left), operand_map) == norm.right):
            return Structure.SYMMETRIC
        return Structure.GENERAL
    # Add / Sub
    if left is Structure.ZERO:
        return right if isinstance(expr, Add) else Structure.GENERAL
    if right is Structure.ZERO:
        return left
    if left.is_triangular() and left == right:
        return left
    if left.is_symmetric() and right.is_symmetric():
        return Structure.SYMMETRIC
    # M + M^T is symmetric even when M is not
    norm = transpose_normal(expr, operand_map)
    if isinstance(norm, (Add, Sub)):
        lt = transpose_normal(Transpose(norm.left), operand_map)
        if lt == norm.right and isinstance(norm, Add):
            return Structure.SYMMETRIC
    return Structure.GENERAL


@dataclass(frozen=True)
class AnnotatedEquation:
    equation: Equation
    shapes: dict = field(compare=False, default=None)
    structures: dict = field(compare=False, default=None)


def _walk(expr):
    yield expr
    if isinstance(expr, (Transpose, Neg)):
        yield from _walk(expr.arg)
    elif isinstance(expr, (Add, Sub, Mul)):
        yield from _walk(expr.left)
        yield from _walk(expr.right)


def check_properties(eq):
    """Annotate every node with shape and derived structure; verify the
    equation is consistent (equal side shapes, no structure contradiction)."""
    omap = eq.operand_map
    shapes = {}
    structures = {}
    for side in (eq.lhs, eq.rhs):
        for node in _walk(side):
            shapes[node] = derive_shape(node, omap)
            structures[node] = derive_structure(node, omap)
    if shapes[eq.lhs] != shapes[eq.rhs]:
        ls, rs = shapes[eq.lhs], shapes[eq.rhs]
        raise ShapeError(
            f"equation sides differ in shape: ({ls[0]} x {ls[1]}) vs ({rs[0]} x {rs[1]})")
    lhs_s = structures[eq.lhs]
    rhs_s = structures[eq.rhs]
    if lhs_s.is_triangular() and rhs_s.is_symmetric() and rhs_s is not Structure.ZERO:
        raise StructureError(
            f"lhs is derivably {lhs_s.value} but rhs is declared {rhs_s.value}")
    if rhs_s.is_triangular() and lhs_s.is_symmetric() and lhs_s is not Structure.ZERO:
        raise StructureError(
            f"lhs is derivably {lhs_s.value} but rhs is declared {rhs_s.value}")
    return AnnotatedEquation(eq, shapes, structures)


# --------------------------------------------------------------------------- #
# Partitioning
# --------------------------------------------------------------------------- #

def _split_dim(dim, parts):
    if parts == 1:
        return (dim,)
    return tuple(Dim(name=f"{dim}.{i}") for i in range(parts))


def _cell_structure(structure, i, j, steps):
    """Structure inherited by cell (i, j) of a `steps x steps` split."""
    if structure is Structure.GENERAL:
        return Structure.GENERAL, None
    if structure is Structure.ZERO:
        return Structure.ZERO, None
    if structure is Structure.IDENTITY:
        return (Structure.IDENTITY, None) if i == j else (Structure.ZERO, None)
    if structure is Structure.LOWER_TRIANGULAR:
        if i == j:
            return Structure.LOWER_TRIANGULAR, None
        return (Structure.ZERO, None) if i < j else (Structure.GENERAL, None)
    if structure is Structure.UPPER_TRIANGULAR:
        if i == j:
            return Structure.UPPER_TRIANGULAR, None
        return (Structure.ZERO, None) if i > j else (Structure.GENERAL, None)
    # symmetric / spd: diagonal cells keep the property, the lower cells are
    # aliases of the transposed upper cells and are never stored
    if i == j:
        return structure, None
    if i < j:
        return Structure.GENERAL, None
    return Structure.GENERAL, (j, i)


_GRID_SHAPES = {"1x1": (1, 1), "1x2": (1, 2), "2x1": (2, 1), "2x2": (2, 2)}
_LABELS = {
    (1, 1): [["W"]],
    (1, 2): [["L", "R"]],
    (2, 1): [["T"], ["B"]],
    (2, 2): [["TL", "TR"], ["BL", "BR"]],
}


def partition_operand(op, grid):
    """Split an operand into a grid of quadrants with inherited structures.

    Structured (non-general) operands only admit square grids; symmetric and
    SPD bases expose their below-diagonal quadrants as aliases of the
    transposed stored siblings.
    """
    if grid not in _GRID_SHAPES:
        raise PartitionError(f"unknown grid {grid!r}")
    gr, gc = _GRID_SHAPES[grid]
    if op.structure is not Structure.GENERAL and gr != gc:
        raise PartitionError(
            f"operand {op.name} is {op.structure.value}; grid {grid} would "
            "break the square structure")
    row_dims = _split_dim(op.rows, gr)
    col_dims = _split_dim(op.cols, gc)
    labels = _LABELS[(gr, gc)]
    quads = []
    for i in range(gr):
        for j in range(gc):
            if gr == gc and gr > 1:
                structure, alias_cell = _cell_structure(op.structure, i, j, gr)
            else:
                structure, alias_cell = op.structure, None
            alias = None
            if alias_cell is not None:
                alias = f"{op.name}_{labels[alias_cell[0]][alias_cell[1]]}"
            quads.append(Quadrant(labels[i][j], structure,
                                  row_dims[i], col_dims[j], alias))
    return PartitionedOperand(op, grid, tuple(quads))


def quadrant_operand(part, quad):
    """Quadrant viewed as a standalone operand (for symbolic manipulation)."""
    return Operand(f"{part.base.name}_{quad.label}", quad.rows, quad.cols,
                   quad.structure, part.base.role)
