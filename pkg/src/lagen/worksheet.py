"""Blocked algorithm construction from (PME, loop invariant) pairs.

The derivation re-expresses the invariant on the standard 2x2 -> 3x3
repartition (middle block of size b): the facts that hold before an
iteration (boundary at the leading edge of block 1) are subtracted from the
facts required after it (boundary past block 1), and the difference is the
iteration's update list.  Facts are tracked at repartition-cell granularity
against a cell-level resolution of the equation, so the update list comes
out directly as executable statements over block views.
"""

from dataclasses import dataclass, field
from functools import lru_cache

from .errors import LagenError, NoInvariantError, NonSynthesizableError
from .invariants import enumerate_invariants
from .lang import check_properties
from .pme import derive_pmes, resolve_cells


class NoAlgorithmError(LagenError):
    """Every loop invariant of every PME was rejected."""


# --------------------------------------------------------------------------- #
# Statements over repartition block views
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class View:
    """A block of an operand in 3x3 repartition index space.

    Index 0 is the traversed prefix (extent k*b), index 1 the current block
    (extent b), index 2 the remainder (extent n - (k+1)*b).
    """

    op: str
    r: int
    c: int
    trans: bool = False

    def display(self):
        text = f"{self.op}[{self.r}][{self.c}]"
        return text + "^T" if self.trans else text


@dataclass(frozen=True)
class Statement:
    kind: str                 # OperationKind
    out: View                 # written in place
    ins: tuple = ()           # read views (coefficients / factors)
    sign: int = 1

    def display(self):
        o = self.out.display()
        if self.kind == "GEMM_update":
            a, b = self.ins
            op = "-" if self.sign < 0 else "+"
            return f"{o} := {o} {op} {a.display()} * {b.display()}"
        if self.kind == "ADD_SUB":
            if self.ins:
                v = self.ins[0].display()
                op = "-" if self.sign < 0 else "+"
                return f"{o} := {o} {op} {v}"
            return f"{o} := {'-' if self.sign < 0 else ''}{o}"
        ins = ", ".join(v.display() for v in self.ins + (self.out,))
        return f"{o} := {self.kind}({ins})"


@dataclass(frozen=True)
class Algorithm:
    equation: object
    pme: object
    invariant: object
    traversal: str
    statements: tuple         # per-iteration worksheet updates, in order
    rhs_source: str           # operand whose values seed the output storage
    output: str               # the unknown operand (also the work storage)
    index: int = 0

    @property
    def name(self):
        return f"{self.equation.name}_v{self.index}"

    @property
    def mirror_output(self):
        return self.equation.operand(self.output).structure.is_symmetric()


# --------------------------------------------------------------------------- #
# Fact spaces
# --------------------------------------------------------------------------- #

def _span(index, state, traversal):
    """Cells of the 3x3 repartition covered by one 2x2 index at a boundary."""
    grown = (state == "after") == (traversal == "TL_to_BR")
    if index == 0:
        return (0, 1) if grown else (0,)
    return (2,) if grown else (1, 2)


def _region(cell2, state, traversal):
    rows = _span(cell2[0], state, traversal)
    cols = _span(cell2[1], state, traversal)
    return {(i, j) for i in rows for j in cols}


@dataclass
class _CellPlan:
    updates: dict = field(default_factory=dict)   # (root, k) -> g3 update Task
    solver: object = None
    reads: dict = field(default_factory=dict)     # (root, k) -> unknown cells read
    coeff_reads: tuple = ()                       # solver's unknown cells read


@lru_cache(maxsize=None)
def _cell_plans(eq):
    """Cell-level resolution of the equation on the 3x3 repartition."""
    env, plan = resolve_cells(eq, 3)
    unknowns = eq.unknowns
    plans = {}
    for cell, (cell_eq, tasks) in plan.items():
        cp = _CellPlan()
        for t in tasks:
            x_cells = tuple(env.parent[a.name][1:] for a in t.inputs
                            if env.parent.get(a.name, (None,))[0] in unknowns)
            if t.target is None:
                cp.updates[(t.root, t.k)] = t
                cp.reads[(t.root, t.k)] = x_cells
            else:
                cp.solver = t
                cp.coeff_reads = tuple(c for c in x_cells if c != cell)
        plans[cell] = cp
    return env, plans


def _facts(pme, inv_tasks, state, traversal, env3, plans):
    """(solved cells, applied update facts) for one boundary state."""
    unknowns = pme.equation.unknowns
    solved = set()
    applied = set()
    for t in pme.tasks:
        if t.id not in inv_tasks:
            continue
        if t.target is not None:
            region = _region(t.cell, state, traversal)
            solved |= {c for c in region if c in plans}
        else:
            src_cells = {pme.env.parent[a.name][1:] for a in t.inputs
                         if pme.env.parent.get(a.name, (None,))[0] in unknowns}
            if len(src_cells) > 1:
                raise LagenError("update task reads several unknown quadrants")
            target_region = _region(t.cell, state, traversal)
            read_region = (_region(src_cells.pop(), state, traversal)
                           if src_cells else None)
            for c in target_region:
                cp = plans.get(c)
                if cp is None:
                    continue
                for key, cells in cp.reads.items():
                    if key[0] != t.root:
                        continue
                    if read_region is None or \
                            (cells and all(rc in read_region for rc in cells)):
                        applied.add((c, key))
    for c in solved:
        for key in plans[c].updates:
            applied.add((c, key))
    return solved, applied


# --------------------------------------------------------------------------- #
# Worksheet derivation
# --------------------------------------------------------------------------- #

def _statement_from_task(task, env3, x_name):
    """Translate a cell-level task into an in-place statement on views."""

    def view(atom):
        base, i, j = env3.parent[atom.name]
        return View(base, i, j, atom.trans)

    def storage_view(name):
        i, j = env3.parent[name][1:]
        return View(x_name, i, j)

    if task.target is None:
        ins = tuple(view(a) for a in task.inputs)
        return Statement(task.kind, storage_view(task.output), ins, task.sign)
    coeffs = tuple(view(a) for a in task.inputs[:-1])
    return Statement(task.kind, storage_view(task.output), coeffs, task.sign)


def derive_algorithm(pme, inv):
    """Worksheet derivation for one loop invariant.

    Raises NonSynthesizableError when a required update would read a block
    that is not yet available in the state before the iteration.
    """
    if not inv.computed or len(inv.computed) >= len(pme.tasks):
        raise LagenError("invariant must be a proper non-empty task subset")
    if not inv.computed <= {t.id for t in pme.tasks}:
        raise LagenError("invariant does not belong to this PME")
    eq = pme.equation
    if len(eq.unknowns) != 1:
        raise NonSynthesizableError("worksheets support a single unknown")
    (x_name,) = eq.unknowns
    env3, plans = _cell_plans(eq)

    before_solved, before_applied = _facts(pme, inv.computed, "before",
                                           inv.traversal, env3, plans)
    after_solved, after_applied = _facts(pme, inv.computed, "after",
                                         inv.traversal, env3, plans)
    # the loop body can only add work; a fact holding before the iteration
    # but absent from the state after it would have to be undone, so such
    # invariants are not maintainable
    if not before_solved <= after_solved or not before_applied <= after_applied:
        raise NonSynthesizableError(
            "invariant state regresses across the repartition boundary")
    new_solves = after_solved - before_solved
    new_updates = after_applied - before_applied
    for c, key in sorted(new_updates):
        reads = plans[c].reads[key]
        for rc in reads:
            if rc not in before_solved and rc not in new_solves:
                raise NonSynthesizableError(
                    f"update of block {c} reads {rc}, which is neither part "
                    "of the invariant state nor computed this iteration")
    for c in sorted(new_solves):
        for rc in plans[c].coeff_reads:
            if rc not in before_solved and rc not in new_solves:
                raise NonSynthesizableError(
                    f"solve of block {c} reads {rc}, which is not available")

    # topological order over the iteration's work, deterministic tie-break
    nodes = [("U", c, key) for c, key in new_updates]
    nodes += [("S", c, None) for c in new_solves]

    def deps(node):
        kind, c, key = node
        out = []
        if kind == "U":
            for rc in plans[c].reads[key]:
                if rc in new_solves:
                    out.append(("S", rc, None))
        else:
            for c2, key2 in new_updates:
                if c2 == c:
                    out.append(("U", c2, key2))
            for rc in plans[c].coeff_reads:
                if rc in new_solves:
                    out.append(("S", rc, None))
        return out

    def sort_key(node):
        kind, c, key = node
        return (c, 0 if kind == "U" else 1, key or (-1, -1))

    ordered = []
    remaining = set(nodes)
    while remaining:
        ready = [n for n in remaining if all(d not in remaining for d in deps(n))]
        if not ready:
            raise NonSynthesizableError("cyclic update dependencies")
        node = min(ready, key=sort_key)
        remaining.remove(node)
        ordered.append(node)

    statements = []
    for kind, c, key in ordered:
        task = plans[c].updates[key] if kind == "U" else plans[c].solver
        statements.append(_statement_from_task(task, env3, x_name))

    from .lang import Ref
    if not isinstance(eq.rhs, Ref):
        raise NonSynthesizableError("right-hand side must be a plain operand")
    return Algorithm(eq, pme, inv, inv.traversal, tuple(statements),
                     rhs_source=eq.rhs.name, output=x_name)


def enumerate_algorithms(eq):
    """Every synthesizable blocked variant of the equation."""
    check_properties(eq)
    out = []
    idx = 0
    for pme in derive_pmes(eq):
        try:
            invariants = enumerate_invariants(pme)
        except NoInvariantError:
            continue
        for inv in invariants:
            try:
                alg = derive_algorithm(pme, inv)
            except NonSynthesizableError:
                continue
            out.append(Algorithm(alg.equation, alg.pme, alg.invariant,
                                 alg.traversal, alg.statements,
                                 alg.rhs_source, alg.output, index=idx))
            idx += 1
    if not out:
        raise NoAlgorithmError(f"no synthesizable variant for {eq.name!r}")
    return out


# --------------------------------------------------------------------------- #
# Flop counting
# --------------------------------------------------------------------------- #

def _extents(n, b, k):
    return {0: k * b, 1: b, 2: n - (k + 1) * b}


def statement_flops(stmt, ext, eq):
    """Exact structure-exploiting scalar operation count of one statement."""
    omap = eq.operand_map

    def shape(view):
        r, c = ext[view.r], ext[view.c]
        return (c, r) if view.trans else (r, c)

    m, q = shape(stmt.out)
    if m == 0 or q == 0:
        return 0
    if stmt.kind == "GEMM_update":
        a, b_ = stmt.ins
        p = shape(a)[1]
        if p == 0:
            return 0
        # updates write right-hand-side values held in the output storage;
        # the stored region is the rhs operand's, not the factor's
        from .lang import Ref
        rhs_sym = (isinstance(eq.rhs, Ref)
                   and omap[eq.rhs.name].structure.is_symmetric())
        if rhs_sym and stmt.out.r == stmt.out.c:
            return q * (q + 1) * p
        return 2 * m * p * q
    if stmt.kind == "ADD_SUB":
        return m * q if stmt.ins or stmt.sign < 0 else 0
    if stmt.kind == "CHOL":
        return m * (m + 1) * (2 * m + 1) // 6
    if stmt.kind in ("TRSM_left_transposed",):
        p = shape(stmt.ins[0])[0]
        return q * p * p
    if stmt.kind == "TRSM_right":
        p = shape(stmt.ins[0])[0]
        return m * p * p
    if stmt.kind == "SYLV":
        return m * q * (m + q)
    if stmt.kind == "LYAP":
        return m * m * (m + 1)
    raise LagenError(f"no cost model for {stmt.kind}")


def flop_count(alg, n, b):
    """Exact dynamic scalar-op count of the variant at order n, block b.

    Obtained by summing the per-statement closed forms over the loop
    iterations; the interpreter's dynamic counter cross-checks this.
    """
    if n % b:
        raise LagenError(f"block size {b} does not divide {n}")
    total = 0
    for k in range(n // b):
        ext = _extents(n, b, k)
        for stmt in alg.statements:
            total += statement_flops(stmt, ext, alg.equation)
    return total


# --------------------------------------------------------------------------- #
# Worksheet rendering
# --------------------------------------------------------------------------- #

def format_worksheet(alg):
    inv = alg.invariant
    lines = [
        f"variant {alg.name}: invariant {inv.label()} traversal {alg.traversal}",
        f"  storage: {alg.output} := {alg.rhs_source}",
        "  for k in 0 .. n/b - 1:",
        "    repartition 2x2 -> 3x3, middle block b",
    ]
    for i, stmt in enumerate(alg.statements, 1):
        lines.append(f"    {i}: {stmt.display()}")
    lines.append("    continue with boundary moved past block 1")
    if alg.mirror_output:
        lines.append(f"  mirror lower triangle of {alg.output} from the upper")
    return "\n".join(lines) + "\n"
