"""Partitioned matrix expressions.

An equation over n x n operands is expanded over a conformal block split of
every operand; zero blocks annihilate terms and alias blocks of symmetric
operands are rewritten as transposed reads of their stored siblings.  Each
block-level equation is then resolved against a fixed database of known
operation patterns (Cholesky, triangular solves, Sylvester/Lyapunov,
accumulation updates), iterating to a fixed point: a block becoming known can
unlock the equations of later blocks.

The same machinery runs at the 2x2 level (producing the PME proper) and at
the 3x3 repartition level (producing the per-cell plan the worksheet
derivation consumes).
"""

from dataclasses import dataclass

from .errors import NoPmeError, ShapeError
from .lang import (
    Mul,
    Operand,
    Ref,
    Structure,
    Transpose,
    partition_operand,
    transpose_normal,
)


# --------------------------------------------------------------------------- #
# Terms
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class Atom:
    name: str
    trans: bool = False

    def transposed(self):
        return Atom(self.name, not self.trans)

    def display(self):
        return f"{self.name}^T" if self.trans else self.name


@dataclass(frozen=True)
class Term:
    """Signed product of atoms, tagged with its origin in the root equation.

    `root` indexes the flattened term of the source equation this block term
    was expanded from; `k` is the contraction block index for two-factor
    products (None otherwise).
    """

    sign: int
    factors: tuple
    root: int = -1
    k: int = None

    def transposed(self):
        return Term(self.sign,
                    tuple(a.transposed() for a in reversed(self.factors)),
                    self.root, self.k)

    def key(self):
        return (tuple((a.name, a.trans) for a in self.factors), self.sign)

    def display(self):
        text = " * ".join(a.display() for a in self.factors)
        return text if self.sign > 0 else f"-({text})"


def as_terms(expr, operand_map):
    """Flatten an expression into a list of signed atom products."""
    expr = transpose_normal(expr, operand_map)

    def go(node, sign):
        from .lang import Add, Neg, Sub
        if isinstance(node, Add):
            return go(node.left, sign) + go(node.right, sign)
        if isinstance(node, Sub):
            return go(node.left, sign) + go(node.right, -sign)
        if isinstance(node, Neg):
            return go(node.arg, -sign)
        return [(sign, _product_atoms(node))]

    return go(expr, 1)


def _product_atoms(node):
    from .lang import Add, Neg, Sub
    if isinstance(node, Ref):
        return (Atom(node.name),)
    if isinstance(node, Transpose):
        if not isinstance(node.arg, Ref):
            raise ShapeError("expression is not in transpose-normal form")
        return (Atom(node.arg.name, True),)
    if isinstance(node, Mul):
        return _product_atoms(node.left) + _product_atoms(node.right)
    if isinstance(node, (Add, Sub, Neg)):
        raise NoPmeError("products of compound sums are not supported; "
                         "distribute them in the input equation")
    raise ShapeError(f"unexpected node {node!r}")


# --------------------------------------------------------------------------- #
# Block expansion
# --------------------------------------------------------------------------- #

def _cell_label(g, i, j):
    if g == 1:
        return "W"
    if g == 2:
        return ("TL", "TR", "BL", "BR")[i * 2 + j]
    return f"{i}{j}"


def cell_name(base, g, i, j):
    return f"{base}_{_cell_label(g, i, j)}"


class BlockEnv:
    """Stored-quadrant operands for one conformal g x g split."""

    def __init__(self, eq, g):
        self.eq = eq
        self.g = g
        self.operands = {}     # quadrant operand name -> Operand
        self.cells = {}        # (base, i, j) -> Atom | None (zero)
        self.parent = {}       # quadrant name -> (base, i, j)
        dims = {(op.rows, op.cols) for op in eq.operands}
        if len(dims) != 1 or any(r != c for r, c in dims):
            raise NoPmeError(
                "block expansion requires all operands square on one shared order")
        for op in eq.operands:
            for i in range(g):
                for j in range(g):
                    struct, alias = _inherit(op.structure, i, j)
                    if struct is Structure.ZERO:
                        self.cells[(op.name, i, j)] = None
                        continue
                    if alias is not None:
                        stored = cell_name(op.name, g, alias[0], alias[1])
                        self.cells[(op.name, i, j)] = Atom(stored, True)
                        continue
                    name = cell_name(op.name, g, i, j)
                    rows = _part_dim(op.rows, g, i)
                    cols = _part_dim(op.cols, g, j)
                    self.operands[name] = Operand(name, rows, cols, struct, op.role)
                    self.cells[(op.name, i, j)] = Atom(name)
                    self.parent[name] = (op.name, i, j)

    def atom(self, base, i, j, trans=False):
        got = self.cells[(base, i, j)]
        if got is None:
            return None
        return self.norm_atom(got.transposed() if trans else got)

    def norm_atom(self, atom):
        # transposes of symmetric quadrants are the quadrants themselves
        if atom.trans and self.operands[atom.name].structure.is_symmetric():
            return Atom(atom.name, False)
        return atom

    def norm_term_key(self, term):
        return (tuple((a.name, a.trans) for a in
                      (self.norm_atom(x) for x in term.factors)), term.sign)

    def structure(self, atom):
        s = self.operands[atom.name].structure
        return s.transposed() if atom.trans else s

    def is_stored(self, base, i, j):
        got = self.cells.get((base, i, j))
        return got is not None and not got.trans


def _part_dim(dim, g, i):
    from .lang import Dim
    return Dim(name=f"{dim}.{i}") if g > 1 else dim


def _inherit(structure, i, j):
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
    if i == j:
        return structure, None
    return (Structure.GENERAL, None) if i < j else (Structure.GENERAL, (j, i))


def _expand_term(env, sign, atoms, root, i, j):
    """Block cell (i, j) of one signed product term; returns a term list."""
    g = env.g
    if len(atoms) == 1:
        a = atoms[0]
        base_i, base_j = (j, i) if a.trans else (i, j)
        cell = env.atom(a.name, base_i, base_j, a.trans)
        return [] if cell is None else [Term(sign, (cell,), root, None)]
    if len(atoms) == 2:
        out = []
        for k in range(g):
            a = atoms[0]
            left = env.atom(a.name, k, i, True) if a.trans else env.atom(a.name, i, k)
            b = atoms[1]
            right = env.atom(b.name, j, k, True) if b.trans else env.atom(b.name, k, j)
            if left is None or right is None:
                continue
            out.append(Term(sign, (left, right), root, k))
        return out
    raise NoPmeError("products of three or more operands are outside the "
                     "pattern database")


@dataclass(frozen=True)
class CellEquation:
    """One block-level equation: sum of lhs terms equals a stored rhs cell."""

    cell: tuple              # (i, j)
    lhs_terms: tuple         # of Term
    target: str              # stored rhs quadrant operand name
    target_structure: Structure

    def display(self):
        lhs = " + ".join(t.display() for t in self.lhs_terms) or "0"
        return f"{lhs} = {self.target}".replace("+ -(", "- (")


def expand_cells(eq, g):
    """All stored-cell equations of the g x g block expansion."""
    env = BlockEnv(eq, g)
    omap = eq.operand_map
    lhs_root_terms = as_terms(eq.lhs, omap)
    rhs_terms = as_terms(eq.rhs, omap)
    if len(rhs_terms) != 1 or len(rhs_terms[0][1]) != 1 or rhs_terms[0][0] != 1:
        raise NoPmeError("right-hand side must be a single operand reference")
    rhs_atom = rhs_terms[0][1][0]
    if rhs_atom.trans:
        raise NoPmeError("right-hand side must be an untransposed operand")
    rhs_name = rhs_atom.name

    cells = []
    for i in range(g):
        for j in range(g):
            target = env.atom(rhs_name, i, j)
            if target is None:
                raise NoPmeError(
                    f"right-hand side block ({i},{j}) is structurally zero")
            terms = []
            for root, (sign, atoms) in enumerate(lhs_root_terms):
                terms.extend(_expand_term(env, sign, atoms, root, i, j))
            terms.sort(key=Term.key)
            if target.trans:
                # alias cell: must be the transpose of the stored sibling's
                # equation, in which case it carries no information
                sib_i, sib_j = env.parent[target.name][1:]
                sib_terms = []
                for root, (sign, atoms) in enumerate(lhs_root_terms):
                    sib_terms.extend(_expand_term(env, sign, atoms, root, sib_i, sib_j))
                flipped = sorted(env.norm_term_key(t.transposed())
                                 for t in sib_terms)
                if flipped != sorted(env.norm_term_key(t) for t in terms):
                    raise NoPmeError(
                        f"block ({i},{j}) aliases ({sib_i},{sib_j}) but its "
                        "equation is not the transposed sibling equation")
                continue
            cells.append(CellEquation((i, j), tuple(terms), target.name,
                                      env.operands[target.name].structure))
    return env, cells


# --------------------------------------------------------------------------- #
# Pattern database
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class Pattern:
    kind: str
    recursive: bool
    matcher: object = None

    def match(self, terms, unknown, env, target_structure):
        return self.matcher(terms, unknown, env, target_structure)


def _logical(env, atom):
    return env.structure(atom)


def _match_chol(terms, x, env, target_structure):
    if len(terms) != 1 or terms[0].sign != 1:
        return None
    f = terms[0].factors
    if len(f) != 2:
        return None
    if f[0] != Atom(x, True) or f[1] != Atom(x, False):
        return None
    if env.operands[x].structure is not Structure.UPPER_TRIANGULAR:
        return None
    if target_structure is not Structure.SPD:
        return None
    return {"inputs": (), "display": f"{x}^T * {x}"}


def _match_lyap(terms, x, env, target_structure):
    if len(terms) != 2 or any(t.sign != 1 for t in terms):
        return None
    fs = [t.factors for t in terms]
    if any(len(f) != 2 for f in fs):
        return None
    lx = next((f for f in fs if f[1] == Atom(x, False)), None)
    xl = next((f for f in fs if f[0] == Atom(x, False)), None)
    if lx is None or xl is None or lx is xl:
        return None
    coeff = lx[0]
    if coeff.name == x or xl[1] != coeff.transposed():
        return None
    if _logical(env, coeff) is not Structure.LOWER_TRIANGULAR:
        return None
    if not env.operands[x].structure.is_symmetric():
        return None
    return {"inputs": (coeff,), "display": f"{coeff.display()} * {x} + {x} * "
                                           f"{coeff.transposed().display()}"}


def _match_sylv(terms, x, env, target_structure):
    if len(terms) != 2 or any(t.sign != 1 for t in terms):
        return None
    fs = [t.factors for t in terms]
    if any(len(f) != 2 for f in fs):
        return None
    lx = next((f for f in fs if f[1] == Atom(x, False) and f[0].name != x), None)
    xu = next((f for f in fs if f[0] == Atom(x, False) and f[1].name != x), None)
    if lx is None or xu is None:
        return None
    low, up = lx[0], xu[1]
    if _logical(env, low) is not Structure.LOWER_TRIANGULAR:
        return None
    if _logical(env, up) is not Structure.UPPER_TRIANGULAR:
        return None
    return {"inputs": (low, up),
            "display": f"{low.display()} * {x} + {x} * {up.display()}"}


def _match_trsm_left_t(terms, x, env, target_structure):
    if len(terms) != 1 or terms[0].sign != 1:
        return None
    f = terms[0].factors
    if len(f) != 2 or f[1] != Atom(x, False):
        return None
    coeff = f[0]
    if not coeff.trans or coeff.name == x:
        return None
    if not env.operands[coeff.name].structure.is_triangular():
        return None
    return {"inputs": (coeff,), "display": f"{coeff.display()} * {x}"}


def _match_trsm_right(terms, x, env, target_structure):
    if len(terms) != 1 or terms[0].sign != 1:
        return None
    f = terms[0].factors
    if len(f) != 2 or f[0] != Atom(x, False):
        return None
    coeff = f[1]
    if coeff.name == x or not _logical(env, coeff).is_triangular():
        return None
    return {"inputs": (coeff,), "display": f"{x} * {coeff.display()}"}


def _match_copy(terms, x, env, target_structure):
    if len(terms) != 1 or len(terms[0].factors) != 1:
        return None
    a = terms[0].factors[0]
    if a.name != x:
        return None
    return {"inputs": (), "display": a.display(), "sign": terms[0].sign,
            "trans": a.trans}


# Declaration order is the matching order; first match wins.  LYAP precedes
# SYLV because every Lyapunov-form equation also matches the Sylvester
# pattern with the transposed coefficient.
PATTERN_DB = (
    Pattern("CHOL", True, _match_chol),
    Pattern("LYAP", True, _match_lyap),
    Pattern("SYLV", True, _match_sylv),
    Pattern("TRSM_left_transposed", False, _match_trsm_left_t),
    Pattern("TRSM_right", False, _match_trsm_right),
    Pattern("ADD_SUB", False, _match_copy),
)

RECURSIVE_KINDS = tuple(p.kind for p in PATTERN_DB if p.recursive)


# --------------------------------------------------------------------------- #
# Tasks and fixed-point resolution
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class Task:
    id: str
    kind: str                 # OperationKind
    output: str               # quadrant operand written
    inputs: tuple             # Atom operands read
    cell: tuple               # (i, j) of the defining block equation
    target: str = None        # rhs storage quadrant (solver tasks)
    sign: int = -1            # accumulation sign (update tasks)
    root: int = -1            # root-equation term index (update tasks)
    k: int = None             # contraction block index (update tasks)
    display: str = ""

    @property
    def is_update(self):
        return self.kind in ("GEMM_update", "ADD_SUB") and self.target is None

    def line(self):
        ins = ", ".join(a.display() for a in self.inputs)
        return f"{self.id}: {self.kind}({ins}) -> {self.output} :: {self.display}"


@dataclass(frozen=True)
class PME:
    equation: object
    partitioning: dict
    tasks: tuple
    env: object               # BlockEnv of the 2x2 split
    index: int = 0

    def task(self, tid):
        for t in self.tasks:
            if t.id == tid:
                return t
        raise KeyError(tid)

    def lines(self):
        return [t.line() for t in self.tasks]


class Unresolved:
    """Normal non-match result of `match_pattern`."""

    def __repr__(self):
        return "Unresolved"


UNRESOLVED = Unresolved()


def match_pattern(cell_eq, known, env, db=PATTERN_DB, next_id=None):
    """Resolve one block equation against the database.

    Returns a list of tasks (accumulation updates feeding one solver) or
    UNRESOLVED.  Known product terms are moved to the right-hand side as
    GEMM_update prework; the remaining unknown terms must instantiate a
    database pattern exactly.
    """
    ids = next_id or iter(f"T{i}" for i in range(1, 10**6)).__next__
    unknown_terms = []
    update_terms = []
    for term in cell_eq.lhs_terms:
        names = {a.name for a in term.factors}
        if names & known == names:
            update_terms.append(term)
        else:
            unknown_terms.append(term)
    unknown_names = {a.name for t in unknown_terms for a in t.factors} - known
    if len(unknown_names) != 1 or not unknown_terms:
        return UNRESOLVED
    (x,) = unknown_names

    if any(len(t.factors) > 2 for t in update_terms):
        return UNRESOLVED
    hit = None
    for pattern in db:
        res = pattern.match(tuple(unknown_terms), x, env, cell_eq.target_structure)
        if res is not None:
            hit = (pattern, res)
            break
    if hit is None:
        return UNRESOLVED
    pattern, res = hit

    tasks = []
    for term in update_terms:
        sign = -term.sign
        kind = "GEMM_update" if len(term.factors) == 2 else "ADD_SUB"
        op = "-" if sign < 0 else "+"
        body = " * ".join(a.display() for a in term.factors)
        tasks.append(Task(
            id=ids(), kind=kind, output=cell_eq.target, inputs=term.factors,
            cell=cell_eq.cell, sign=sign, root=term.root, k=term.k,
            display=f"{cell_eq.target} := {cell_eq.target} {op} {body}"))
    solver_inputs = res["inputs"] + (Atom(cell_eq.target),)
    tasks.append(Task(
        id=ids(), kind=pattern.kind, output=x, inputs=solver_inputs,
        cell=cell_eq.cell, target=cell_eq.target,
        sign=res.get("sign", 1), k=None,
        display=f"{res['display']} = {cell_eq.target}"))
    return tasks


def resolve_cells(eq, g):
    """Fixed-point resolution of every stored cell of the g x g expansion.

    Returns (env, plan) where plan maps each cell to its resolved task list
    in resolution order.  Raises NoPmeError if a fixed point is reached with
    unresolved cells.
    """
    env, cells = expand_cells(eq, g)
    known = {name for name, op in env.operands.items() if not op.is_output}
    counter = iter(range(1, 10**6))
    ids = (lambda: f"T{next(counter)}")
    plan = {}
    pending = list(cells)
    while pending:
        progressed = False
        remaining = []
        for cell_eq in pending:
            tasks = match_pattern(cell_eq, known, env, next_id=ids)
            if tasks is UNRESOLVED:
                remaining.append(cell_eq)
                continue
            plan[cell_eq.cell] = (cell_eq, tasks)
            known.add(tasks[-1].output)
            progressed = True
        pending = remaining
        if not progressed:
            break
    if pending:
        labels = ", ".join(str(c.cell) for c in pending)
        raise NoPmeError(f"no pattern resolves block equation(s) at {labels}")
    return env, plan


def derive_pmes(eq):
    """All PMEs of the equation under the admissible 2x2 partitioning.

    Every operand shares the single traversal order here, so the admissible
    partitioning set has one element: all operands split 2x2.  The result is
    a list for interface stability; entries are deduplicated and deterministic.
    """
    env, plan = resolve_cells(eq, 2)
    tasks = []
    for cell in sorted(plan):
        tasks.extend(plan[cell][1])
    partitioning = {op.name: partition_operand(op, "2x2") for op in eq.operands}
    pme = PME(eq, partitioning, tuple(tasks), env, 0)
    _check_back_substitution(eq, plan)
    return [pme]


def _check_back_substitution(eq, plan):
    """Defensive: every cell got exactly one solver task, placed last."""
    for cell, (cell_eq, tasks) in plan.items():
        solvers = [t for t in tasks if t.target is not None]
        if len(solvers) != 1 or tasks[-1] is not solvers[0]:
            raise NoPmeError(f"internal: malformed task chain at {cell}")


def format_pme(pme):
    return "\n".join(pme.lines()) + "\n"
