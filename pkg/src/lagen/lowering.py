"""Loop-level program materialization and its transformation passes.

`lower_algorithm` turns a blocked variant into an explicit-loop program over
concrete sizes: block views become gathers with affine offsets, every
worksheet statement becomes the loop nest of its summation-based definition,
and recursive leaf kinds become inlined unblocked base cases.  Passes:

  prune_structure   activate triangular loop bounds and stored-triangle
                    scatter restrictions implied by operand structures
  tile              strip-mine rectangular update nests
  map_nu_kernels    an extra tiling level whose innermost computes are
                    calls into the fixed micro-kernel set

The passes re-materialize the program from its statement descriptors under
new options, which keeps every pass total and deterministic.  Programs are
interpreted by `interpret_sigma` (also the instrumentation point for
structural-zero reads and alias writes).
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import LoweringError, NotDivisibleError, VerificationError
from .lang import Structure


# --------------------------------------------------------------------------- #
# Affine expressions and IR nodes
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class Aff:
    """Affine form const + sum(coef * var) over loop variables."""

    const: int = 0
    terms: tuple = ()

    @staticmethod
    def of(value):
        if isinstance(value, Aff):
            return value
        return Aff(const=int(value))

    @staticmethod
    def var(name, coef=1):
        return Aff(terms=((name, coef),))

    def _combine(self, other, sign):
        other = Aff.of(other)
        acc = dict(self.terms)
        for v, c in other.terms:
            acc[v] = acc.get(v, 0) + sign * c
        terms = tuple(sorted((v, c) for v, c in acc.items() if c))
        return Aff(self.const + sign * other.const, terms)

    def __add__(self, other):
        return self._combine(other, 1)

    def __sub__(self, other):
        return self._combine(other, -1)

    def scaled(self, k):
        return Aff(self.const * k, tuple((v, c * k) for v, c in self.terms))

    def eval(self, env):
        return self.const + sum(c * env[v] for v, c in self.terms)

    def subst(self, var, value):
        hit = dict(self.terms).get(var)
        if hit is None:
            return self
        terms = tuple((v, c) for v, c in self.terms if v != var)
        return Aff(self.const + hit * value, terms)

    @property
    def is_const(self):
        return not self.terms

    def render(self):
        parts = []
        for v, c in self.terms:
            if c == 1:
                parts.append(v)
            else:
                parts.append(f"{c}*{v}")
        if self.const or not parts:
            parts.append(str(self.const))
        return " + ".join(parts).replace("+ -", "- ")


@dataclass(frozen=True)
class Acc:
    op: str
    r: Aff
    c: Aff


@dataclass(frozen=True)
class Prim:
    """Scalar statement; the first access is written (in place)."""

    op: str                   # mulsub | muladd | div | sqrt | sumdiv | copy
    args: tuple

    FLOPS = {"mulsub": 2, "muladd": 2, "div": 1, "sqrt": 1, "sumdiv": 2,
             "copy": 0, "add": 1, "sub": 1}


@dataclass(frozen=True)
class Loop:
    var: str
    lo: Aff
    hi: Aff
    step: int
    body: tuple


@dataclass(frozen=True)
class TileRef:
    """A nu x nu tile: either an operand view or a scratch buffer."""

    op: str                   # operand name or buffer name
    r: Aff = None             # None for buffers
    c: Aff = None

    @property
    def is_buffer(self):
        return self.r is None


@dataclass(frozen=True)
class NuCall:
    kernel: str               # copy | transpose | mmacc | addsub | scale |
                              # trsm | chol | sylv
    tiles: tuple              # of TileRef, destination first
    sign: int = 1


@dataclass(frozen=True)
class GatherScatter:
    kind: str                 # gather | scatter
    op: str
    row: Aff
    col: Aff
    rows: Aff
    cols: Aff
    trans: bool = False
    accumulate: bool = False

    def render(self):
        t = "^T" if self.trans else ""
        acc = "+=" if self.accumulate else ""
        return (f"{self.op}[{self.row.render()}:+{self.rows.render()},"
                f"{self.col.render()}:+{self.cols.render()}]{t}{acc}")


@dataclass(frozen=True)
class SigmaStmt:
    tag: str                  # copy_in | body | mirror
    op: str                   # statement kind for the dump
    nodes: tuple
    gathers: tuple = ()
    scatters: tuple = ()
    source: object = None     # worksheet Statement for body stmts


@dataclass(frozen=True)
class Options:
    pruned: bool = False
    tiles: int = None
    nu: int = None

    @property
    def mode(self):
        return f"nu_tiled({self.nu})" if self.nu else "scalar"


@dataclass(frozen=True)
class SigmaProgram:
    name: str
    algorithm: object
    n: int
    b: int
    options: Options
    prologue: tuple
    body: tuple               # per-iteration statements, k ranges over n/b
    epilogue: tuple
    buffers: tuple = ()

    @property
    def iterations(self):
        return self.n // self.b

    @property
    def mode(self):
        return self.options.mode

    def statements(self):
        return list(self.prologue) + list(self.body) + list(self.epilogue)


# --------------------------------------------------------------------------- #
# Materialization
# --------------------------------------------------------------------------- #

K_VAR = "k"


class _Ctx:
    def __init__(self, alg, n, b, options):
        self.alg = alg
        self.eq = alg.equation
        self.n = n
        self.b = b
        self.options = options
        self.counter = 0
        self.omap = self.eq.operand_map
        from .lang import Ref
        self.sym_rhs = (isinstance(self.eq.rhs, Ref) and
                        self.omap[self.eq.rhs.name].structure.is_symmetric())
        self.x_struct = self.omap[alg.output].structure

    def fresh(self):
        self.counter += 1
        return f"i{self.counter}"

    def extent(self, idx):
        if idx == 0:
            return Aff.var(K_VAR, self.b)
        if idx == 1:
            return Aff.of(self.b)
        return Aff(const=self.n - self.b, terms=((K_VAR, -self.b),))

    def offset(self, idx):
        if idx == 0:
            return Aff.of(0)
        if idx == 1:
            return Aff.var(K_VAR, self.b)
        return Aff(const=self.b, terms=((K_VAR, self.b),))

    def max_extent(self, idx):
        # extents are monotone affine in k over [0, iterations)
        last = self.n // self.b - 1
        return max(self.extent(idx).eval({K_VAR: 0}),
                   self.extent(idx).eval({K_VAR: last}))

    def is_sym_diag_output(self, view):
        return (view.op == self.alg.output and self.x_struct.is_symmetric()
                and view.r == view.c)

    def logical_structure(self, view):
        base = self.omap[view.op].structure
        if view.r != view.c:
            s = Structure.GENERAL
        else:
            s = base if base.is_triangular() else Structure.GENERAL
        return s.transposed() if view.trans else s


def _loop(ctx, lo, hi, body_fn, step=1):
    """Build a loop unless it is statically empty; fold trip-count-1 ranges."""
    lo, hi = Aff.of(lo), Aff.of(hi)
    if lo.is_const and hi.is_const:
        if hi.const <= lo.const:
            return []
        if hi.const - lo.const <= step:
            return body_fn(lo)
    var = ctx.fresh()
    body = body_fn(Aff.var(var))
    if not body:
        return []
    return [Loop(var, lo, hi, step, tuple(body))]


def _elem(view_offsets, i, j):
    """Access of logical element (i, j) of a view."""
    op, off_r, off_c, trans = view_offsets
    if trans:
        return Acc(op, off_r + j, off_c + i)
    return Acc(op, off_r + i, off_c + j)


def _view_offsets(ctx, view):
    return (view.op, ctx.offset(view.r), ctx.offset(view.c), view.trans)


def _gs(ctx, view, kind, accumulate=False):
    r, c = ctx.extent(view.r), ctx.extent(view.c)
    return GatherScatter(kind, view.op, ctx.offset(view.r), ctx.offset(view.c),
                         r, c, view.trans, accumulate)


# -- GEMM-style update nests --------------------------------------------------

def _gemm_term(ctx, out_v, a_v, b_v, i, j, kk, sign):
    out = _elem(_view_offsets(ctx, out_v), i, j)
    op = "mulsub" if sign < 0 else "muladd"

    def factor(view, row, col, mirror):
        off = _view_offsets(ctx, view)
        if mirror:
            return _elem(off, col, row)
        return _elem(off, row, col)

    return Prim(op, (out,
                     factor(a_v, i, kk, False),
                     factor(b_v, kk, j, False)))


def _gemm_nodes(ctx, stmt):
    """Loops for out += sign * A * B with structure-aware refinements."""
    out_v, (a_v, b_v) = stmt.out, stmt.ins
    sign = stmt.sign
    M = ctx.extent(out_v.r)
    Q = ctx.extent(out_v.c)
    P = ctx.extent(a_v.c if not a_v.trans else a_v.r)
    if ctx.max_extent(out_v.r) == 0 or ctx.max_extent(out_v.c) == 0 \
            or ctx.max_extent(a_v.c if not a_v.trans else a_v.r) == 0:
        return []
    pruned = ctx.options.pruned
    upper_target = ctx.sym_rhs and out_v.r == out_v.c
    symm_a = ctx.is_sym_diag_output(a_v)
    symm_b = ctx.is_sym_diag_output(b_v)
    if symm_a and symm_b:
        raise LoweringError("product of two symmetric work views")
    off_out = _view_offsets(ctx, out_v)
    off_a = _view_offsets(ctx, a_v)
    off_b = _view_offsets(ctx, b_v)
    op = "mulsub" if sign < 0 else "muladd"

    def term(i, j, kk, a_mirror=False, b_mirror=False):
        a = _elem(off_a, kk, i) if a_mirror else _elem(off_a, i, kk)
        b = _elem(off_b, j, kk) if b_mirror else _elem(off_b, kk, j)
        return [Prim(op, (_elem(off_out, i, j), a, b))]

    def kk_loops(i, j):
        # symmetric work views are materialized in their upper triangle only;
        # the below-diagonal part is read through the transposed element
        if symm_a:
            return (_loop(ctx, 0, i, lambda kk: term(i, j, kk, a_mirror=True))
                    + _loop(ctx, i, P, lambda kk: term(i, j, kk)))
        if symm_b:
            return (_loop(ctx, 0, j, lambda kk: term(i, j, kk))
                    + _loop(ctx, j, P, lambda kk: term(i, j, kk, b_mirror=True)))
        return _loop(ctx, 0, P, lambda kk: term(i, j, kk))

    def i_loop(j):
        # scatters always stay within the stored region of the target:
        # symmetric right-hand sides only materialize their upper triangle
        hi = (j + 1) if upper_target else M
        return _loop(ctx, 0, hi, lambda i: kk_loops(i, j))

    nodes = _loop(ctx, 0, Q, i_loop)
    return nodes


# -- triangular solves ---------------------------------------------------------

def _trsm_nodes(ctx, stmt):
    """In-place solve of T X = W (left) or X T = W (right)."""
    out_v = stmt.out
    coeff_v = stmt.ins[0]
    left = stmt.kind == "TRSM_left_transposed"
    logical = ctx.logical_structure(coeff_v)
    if logical not in (Structure.LOWER_TRIANGULAR, Structure.UPPER_TRIANGULAR):
        raise LoweringError("triangular solve with non-triangular coefficient")
    lower = logical is Structure.LOWER_TRIANGULAR
    M = ctx.extent(out_v.r)
    Q = ctx.extent(out_v.c)
    if ctx.max_extent(out_v.r) == 0 or ctx.max_extent(out_v.c) == 0:
        return []
    off_w = _view_offsets(ctx, out_v)
    off_t = _view_offsets(ctx, coeff_v)
    pruned = ctx.options.pruned

    if left:
        def sub(i, j, kk):
            return [Prim("mulsub", (_elem(off_w, i, j), _elem(off_t, i, kk),
                                    _elem(off_w, kk, j)))]

        def row(j, i_fwd):
            i = i_fwd if lower else (M - Aff.of(1) - i_fwd)
            inner = []
            if lower:
                inner += _loop(ctx, 0, i, lambda kk: sub(i, j, kk))
                if not pruned:
                    inner += _loop(ctx, i + 1, M, lambda kk: sub(i, j, kk))
            else:
                inner += _loop(ctx, i + 1, M, lambda kk: sub(i, j, kk))
                if not pruned:
                    inner += _loop(ctx, 0, i, lambda kk: sub(i, j, kk))
            inner.append(Prim("div", (_elem(off_w, i, j), _elem(off_t, i, i))))
            return inner

        return _loop(ctx, 0, Q, lambda j: _loop(ctx, 0, M,
                                                lambda i_fwd: row(j, i_fwd)))

    # right-side: X T = W, solved column-by-column of T
    P = ctx.extent(coeff_v.r)

    def sub(i, j, kk):
        return [Prim("mulsub", (_elem(off_w, i, j), _elem(off_w, i, kk),
                                _elem(off_t, kk, j)))]

    def col(i, j_fwd):
        upper = not lower
        j = j_fwd if upper else (Q - Aff.of(1) - j_fwd)
        inner = []
        if upper:
            inner += _loop(ctx, 0, j, lambda kk: sub(i, j, kk))
            if not pruned:
                inner += _loop(ctx, j + 1, Q, lambda kk: sub(i, j, kk))
        else:
            inner += _loop(ctx, j + 1, Q, lambda kk: sub(i, j, kk))
            if not pruned:
                inner += _loop(ctx, 0, j, lambda kk: sub(i, j, kk))
        inner.append(Prim("div", (_elem(off_w, i, j), _elem(off_t, j, j))))
        return inner

    return _loop(ctx, 0, Q, lambda j_fwd: _loop(ctx, 0, M,
                                                lambda i: col(i, j_fwd)))


# -- inlined unblocked base cases ----------------------------------------------

def _chol_nodes(ctx, stmt):
    """Right-looking in-place factorization; upper triangle only."""
    out_v = stmt.out
    M = ctx.extent(out_v.r)
    if ctx.max_extent(out_v.r) == 0:
        return []
    off = _view_offsets(ctx, out_v)

    def trailing(i, r):
        return _loop(ctx, r, M, lambda c: [
            Prim("mulsub", (_elem(off, r, c), _elem(off, i, r),
                            _elem(off, i, c)))])

    def pivot(i):
        nodes = [Prim("sqrt", (_elem(off, i, i),))]
        nodes += _loop(ctx, i + 1, M, lambda j: [
            Prim("div", (_elem(off, i, j), _elem(off, i, i)))])
        nodes += _loop(ctx, i + 1, M, lambda r: trailing(i, r))
        return nodes

    return _loop(ctx, 0, M, pivot)


def _sylv_nodes(ctx, stmt):
    """Column-by-column substitution for L X + X U = W, in place."""
    out_v = stmt.out
    l_v, u_v = stmt.ins[0], (stmt.ins[1] if len(stmt.ins) > 1 else None)
    M = ctx.extent(out_v.r)
    Q = ctx.extent(out_v.c)
    if ctx.max_extent(out_v.r) == 0 or ctx.max_extent(out_v.c) == 0:
        return []
    off_w = _view_offsets(ctx, out_v)
    off_l = _view_offsets(ctx, l_v)
    if u_v is None:
        # Lyapunov lowered as Sylvester with the transposed coefficient
        op, off_r, off_c, trans = off_l
        off_u = (op, off_r, off_c, not trans)
    else:
        off_u = _view_offsets(ctx, u_v)
    pruned = ctx.options.pruned

    def usub(i, j, kk):
        return [Prim("mulsub", (_elem(off_w, i, j), _elem(off_w, i, kk),
                                _elem(off_u, kk, j)))]

    def lsub(i, j, kk):
        return [Prim("mulsub", (_elem(off_w, i, j), _elem(off_l, i, kk),
                                _elem(off_w, kk, j)))]

    def entry(i, j):
        nodes = []
        nodes += _loop(ctx, 0, i, lambda kk: lsub(i, j, kk))
        if not pruned:
            nodes += _loop(ctx, i + 1, M, lambda kk: lsub(i, j, kk))
        nodes.append(Prim("sumdiv", (_elem(off_w, i, j), _elem(off_l, i, i),
                                     _elem(off_u, j, j))))
        return nodes

    def column(j):
        nodes = []
        nodes += _loop(ctx, 0, M, lambda i: _loop(ctx, 0, j,
                                                  lambda kk: usub(i, j, kk)))
        if not pruned:
            nodes += _loop(ctx, 0, M, lambda i: _loop(
                ctx, j + 1, Q, lambda kk: usub(i, j, kk)))
        nodes += _loop(ctx, 0, M, lambda i: entry(i, j))
        return nodes

    return _loop(ctx, 0, Q, column)


def _lyap_nodes(ctx, stmt):
    """Symmetric diagonal-block solve; computes the upper triangle and
    mirrors each entry so the block stays exactly symmetric.  Like the
    other base cases this is inherently structured: there is no dense form
    to prune."""
    out_v = stmt.out
    l_v = stmt.ins[0]
    M = ctx.extent(out_v.r)
    if ctx.max_extent(out_v.r) == 0:
        return []
    off_w = _view_offsets(ctx, out_v)
    off_l = _view_offsets(ctx, l_v)

    def entry(i, j):
        nodes = []
        nodes += _loop(ctx, 0, i, lambda kk: [
            Prim("mulsub", (_elem(off_w, i, j), _elem(off_l, i, kk),
                            _elem(off_w, kk, j)))])
        nodes += _loop(ctx, 0, j, lambda kk: [
            Prim("mulsub", (_elem(off_w, i, j), _elem(off_w, i, kk),
                            _elem(off_l, j, kk)))])
        nodes.append(Prim("sumdiv", (_elem(off_w, i, j), _elem(off_l, i, i),
                                     _elem(off_l, j, j))))
        nodes.append(Prim("copy", (_elem(off_w, j, i), _elem(off_w, i, j))))
        return nodes

    return _loop(ctx, 0, M, lambda j: _loop(ctx, 0, j + 1,
                                            lambda i: entry(i, j)))


def _addsub_nodes(ctx, stmt):
    out_v = stmt.out
    M, Q = ctx.extent(out_v.r), ctx.extent(out_v.c)
    if ctx.max_extent(out_v.r) == 0 or ctx.max_extent(out_v.c) == 0:
        return []
    off_out = _view_offsets(ctx, out_v)
    if not stmt.ins:
        if stmt.sign > 0:
            return []
        raise LoweringError("in-place negation is not supported")
    off_in = _view_offsets(ctx, stmt.ins[0])
    op = "add" if stmt.sign > 0 else "sub"

    def entry(i, j):
        return [Prim(op, (_elem(off_out, i, j), _elem(off_in, i, j)))]

    return _loop(ctx, 0, M, lambda i: _loop(ctx, 0, Q, lambda j: entry(i, j)))


# -- tiling ---------------------------------------------------------------------

def _rect_bound(aff):
    # bounds may involve the blocked-loop counter but not sibling loop vars
    return all(v == K_VAR for v, _ in aff.terms)


def _tileable(node):
    """Rectangular perfect nests of accumulation prims strip-mine safely."""
    if not isinstance(node, Loop):
        return False
    if not node.lo.is_const or node.lo.const != 0 or not _rect_bound(node.hi):
        return False
    body = node.body
    if all(isinstance(x, Prim) for x in body):
        return all(x.op in ("mulsub", "muladd", "add", "sub", "copy")
                   for x in body)
    return len(body) == 1 and _tileable(body[0])


def _strip_mine(ctx, node, t):
    if not isinstance(node, Loop):
        return [node]
    hi = node.hi
    body = [x for sub in node.body for x in _strip_mine(ctx, sub, t)]
    # extents here are multiples of b (and t | b), so tiles divide evenly
    if hi.is_const and hi.const <= t:
        return [replace(node, body=tuple(body))]
    tv = ctx.fresh()
    inner = Loop(node.var, Aff.var(tv), Aff.var(tv) + t, node.step, tuple(body))
    return [Loop(tv, node.lo, hi, t, (inner,))]


def _tile_stmt(ctx, nodes, t):
    out = []
    for node in nodes:
        if _tileable(node):
            out.extend(_strip_mine(ctx, node, t))
        elif isinstance(node, Loop):
            out.append(replace(node, body=tuple(_tile_stmt(ctx, node.body, t))))
        else:
            out.append(node)
    return out


# -- micro-kernel materialization -------------------------------------------------

BUF_ACC, BUF_A, BUF_B, BUF_T = "tile_acc", "tile_a", "tile_b", "tile_t"
BUFFERS = (BUF_ACC, BUF_A, BUF_B, BUF_T)


def _load(buf, view_op, r, c, trans=False):
    src = TileRef(view_op, r, c)
    return NuCall("transpose" if trans else "copy", (TileRef(buf), src))


def _store(view_op, r, c, buf):
    return NuCall("copy", (TileRef(view_op, r, c), TileRef(buf)))


def _nu_gemm(ctx, stmt, nu):
    """Tile loops with gathered operands and multiply-accumulate kernels."""
    out_v, (a_v, b_v) = stmt.out, stmt.ins
    M, Q = ctx.extent(out_v.r), ctx.extent(out_v.c)
    P = ctx.extent(a_v.c if not a_v.trans else a_v.r)
    if ctx.max_extent(out_v.r) == 0 or ctx.max_extent(out_v.c) == 0 \
            or ctx.max_extent(a_v.c if not a_v.trans else a_v.r) == 0:
        return []
    upper_target = ctx.sym_rhs and out_v.r == out_v.c
    symm_a = ctx.is_sym_diag_output(a_v)
    symm_b = ctx.is_sym_diag_output(b_v)
    off_out = (ctx.offset(out_v.r), ctx.offset(out_v.c))
    off_a = (ctx.offset(a_v.r), ctx.offset(a_v.c))
    off_b = (ctx.offset(b_v.r), ctx.offset(b_v.c))

    def tile_rc(off, i, j, trans):
        if trans:
            return off[0] + j, off[1] + i
        return off[0] + i, off[1] + j

    def a_load(i, kk, mirror):
        r, c = tile_rc(off_a, kk, i, not a_v.trans) if mirror \
            else tile_rc(off_a, i, kk, a_v.trans)
        return _load(BUF_A, a_v.op, r, c, trans=(a_v.trans != mirror))

    def b_load(kk, j, mirror):
        r, c = tile_rc(off_b, j, kk, not b_v.trans) if mirror \
            else tile_rc(off_b, kk, j, b_v.trans)
        return _load(BUF_B, b_v.op, r, c, trans=(b_v.trans != mirror))

    def mac(i, j, kk, a_mirror=False, b_mirror=False):
        return [a_load(i, kk, a_mirror), b_load(kk, j, b_mirror),
                NuCall("mmacc", (TileRef(BUF_ACC), TileRef(BUF_A),
                                 TileRef(BUF_B)), stmt.sign)]

    def kk_loops(i, j):
        if symm_a:
            return (_loop(ctx, 0, i, lambda kk: mac(i, j, kk, a_mirror=True),
                          step=nu)
                    + _loop(ctx, i, P, lambda kk: mac(i, j, kk), step=nu))
        if symm_b:
            return (_loop(ctx, 0, j, lambda kk: mac(i, j, kk), step=nu)
                    + _loop(ctx, j, P, lambda kk: mac(i, j, kk, b_mirror=True),
                            step=nu))
        return _loop(ctx, 0, P, lambda kk: mac(i, j, kk), step=nu)

    def body(i, j):
        r, c = tile_rc(off_out, i, j, False)
        inner = [_load(BUF_ACC, out_v.op, r, c)]
        inner += kk_loops(i, j)
        inner.append(_store(out_v.op, r, c, BUF_ACC))
        return inner

    def i_loop(j):
        hi = (j + nu) if upper_target else M
        return _loop(ctx, 0, hi, lambda i: body(i, j), step=nu)

    return _loop(ctx, 0, Q, i_loop, step=nu)


def _nu_trsm_left(ctx, w_op, w_off, coeff_view, coeff_off, M, Q, nu,
                  coeff_lower):
    """Block forward substitution at tile granularity (left, logical lower).

    Upper-logical coefficients are handled by the transposition identity
    T X = W  <=>  T^T-style right solve, which the callers avoid by only
    producing lower-logical left solves in nu mode.
    """
    if not coeff_lower:
        raise NotDivisibleError("nu mapping supports lower-logical left solves")

    def t_tile(i, kk):
        # transposed-upper coefficients are gathered with a transposing load
        # so the kernel always sees a logical lower tile
        if coeff_view.trans:
            return _load(BUF_T, coeff_view.op, coeff_off[0] + kk,
                         coeff_off[1] + i, trans=True)
        return _load(BUF_T, coeff_view.op, coeff_off[0] + i,
                     coeff_off[1] + kk, trans=False)

    def update(i, j, kk):
        return [t_tile(i, kk),
                _load(BUF_B, w_op, w_off[0] + kk, w_off[1] + j),
                _load(BUF_ACC, w_op, w_off[0] + i, w_off[1] + j),
                NuCall("mmacc", (TileRef(BUF_ACC), TileRef(BUF_T),
                                 TileRef(BUF_B)), -1),
                _store(w_op, w_off[0] + i, w_off[1] + j, BUF_ACC)]

    def row(i, j):
        nodes = _loop(ctx, 0, i, lambda kk: update(i, j, kk), step=nu)
        nodes += [t_tile(i, i),
                  NuCall("trsm", (TileRef(BUF_T),
                                  TileRef(w_op, w_off[0] + i, w_off[1] + j)))]
        return nodes

    return _loop(ctx, 0, Q, lambda j: _loop(ctx, 0, M,
                                            lambda i: row(i, j), step=nu),
                 step=nu)


def _nu_sylv(ctx, stmt, nu, lyap=False):
    """Tile-level substitution for (panel) Sylvester and Lyapunov solves."""
    out_v = stmt.out
    l_v = stmt.ins[0]
    u_v = stmt.ins[1] if len(stmt.ins) > 1 else None
    M, Q = ctx.extent(out_v.r), ctx.extent(out_v.c)
    if ctx.max_extent(out_v.r) == 0 or ctx.max_extent(out_v.c) == 0:
        return []
    w_off = (ctx.offset(out_v.r), ctx.offset(out_v.c))
    l_off = (ctx.offset(l_v.r), ctx.offset(l_v.c))
    if u_v is None:
        u_off, u_trans, u_op = l_off, not l_v.trans, l_v.op
    else:
        u_off, u_trans, u_op = ((ctx.offset(u_v.r), ctx.offset(u_v.c)),
                                u_v.trans, u_v.op)
    w = out_v.op
    sym = lyap

    def l_tile(buf, i, kk):
        if l_v.trans:
            return _load(buf, l_v.op, l_off[0] + kk, l_off[1] + i, trans=True)
        return _load(buf, l_v.op, l_off[0] + i, l_off[1] + kk)

    def u_tile(buf, kk, j):
        if u_trans:
            return _load(buf, u_op, u_off[0] + j, u_off[1] + kk, trans=True)
        return _load(buf, u_op, u_off[0] + kk, u_off[1] + j)

    def w_tile_rc(i, j):
        return w_off[0] + i, w_off[1] + j

    def w_load(buf, i, j, mirror=False):
        if mirror:
            r, c = w_tile_rc(j, i)
            return _load(buf, w, r, c, trans=True)
        return _load(buf, w, *w_tile_rc(i, j))

    def usub(i, j, kk, mirror=False):
        return [w_load(BUF_A, i, kk, mirror), u_tile(BUF_B, kk, j),
                NuCall("mmacc", (TileRef(BUF_ACC), TileRef(BUF_A),
                                 TileRef(BUF_B)), -1)]

    def lsub(i, j, kk):
        return [l_tile(BUF_A, i, kk), w_load(BUF_B, kk, j),
                NuCall("mmacc", (TileRef(BUF_ACC), TileRef(BUF_A),
                                 TileRef(BUF_B)), -1)]

    def tile(i, j):
        r, c = w_tile_rc(i, j)
        nodes = [_load(BUF_ACC, w, r, c)]
        if sym:
            # within the symmetric block, reads left of the diagonal mirror
            # the transposed stored tiles
            nodes += _loop(ctx, 0, i, lambda kk: usub(i, j, kk, mirror=True),
                           step=nu)
            nodes += _loop(ctx, i, j, lambda kk: usub(i, j, kk), step=nu)
        else:
            nodes += _loop(ctx, 0, j, lambda kk: usub(i, j, kk), step=nu)
        nodes += _loop(ctx, 0, i, lambda kk: lsub(i, j, kk), step=nu)
        nodes.append(_store(w, r, c, BUF_ACC))
        nodes += [l_tile(BUF_T, i, i), u_tile(BUF_B, j, j),
                  NuCall("sylv", (TileRef(w, r, c), TileRef(BUF_T),
                                  TileRef(BUF_B)))]
        return nodes

    def mirror_tile(i, j):
        r, c = w_tile_rc(i, j)
        rm, cm = w_tile_rc(j, i)
        return [NuCall("transpose", (TileRef(w, rm, cm), TileRef(w, r, c)))]

    def col(j):
        if sym:
            nodes = _loop(ctx, 0, j + nu, lambda i: tile(i, j), step=nu)
            nodes += _loop(ctx, 0, j, lambda i: mirror_tile(i, j), step=nu)
            return nodes
        return _loop(ctx, 0, M, lambda i: tile(i, j), step=nu)

    return _loop(ctx, 0, Q, col, step=nu)


def _nu_chol(ctx, stmt, nu):
    """Left-looking tile Cholesky: diagonal tiles factored in a buffer."""
    out_v = stmt.out
    M = ctx.extent(out_v.r)
    if ctx.max_extent(out_v.r) == 0:
        return []
    off = (ctx.offset(out_v.r), ctx.offset(out_v.c))
    w = out_v.op

    def rc(i, j):
        return off[0] + i, off[1] + j

    def diag_update(i, kk):
        return [_load(BUF_A, w, *rc(kk, i), trans=True),
                _load(BUF_B, w, *rc(kk, i)),
                NuCall("mmacc", (TileRef(BUF_ACC), TileRef(BUF_A),
                                 TileRef(BUF_B)), -1)]

    def panel_update(i, j, kk):
        return [_load(BUF_A, w, *rc(kk, i), trans=True),
                _load(BUF_B, w, *rc(kk, j)),
                _load(BUF_ACC, w, *rc(i, j)),
                NuCall("mmacc", (TileRef(BUF_ACC), TileRef(BUF_A),
                                 TileRef(BUF_B)), -1),
                _store(w, *rc(i, j), buf=BUF_ACC)]

    def panel(i, j):
        nodes = _loop(ctx, 0, i, lambda kk: panel_update(i, j, kk), step=nu)
        nodes += [_load(BUF_T, w, *rc(i, i), trans=True),
                  NuCall("trsm", (TileRef(BUF_T), TileRef(w, *rc(i, j))))]
        return nodes

    def column(i):
        nodes = [_load(BUF_ACC, w, *rc(i, i))]
        nodes += _loop(ctx, 0, i, lambda kk: diag_update(i, kk), step=nu)
        nodes += [NuCall("chol", (TileRef(BUF_ACC),)),
                  _store(w, *rc(i, i), buf=BUF_ACC)]
        nodes += _loop(ctx, i + nu, M, lambda j: panel(i, j), step=nu)
        return nodes

    return _loop(ctx, 0, M, column, step=nu)


def _nu_stmt(ctx, stmt, nu):
    if stmt.kind == "GEMM_update":
        return _nu_gemm(ctx, stmt, nu)
    if stmt.kind == "CHOL":
        return _nu_chol(ctx, stmt, nu)
    if stmt.kind == "SYLV":
        return _nu_sylv(ctx, stmt, nu)
    if stmt.kind == "LYAP":
        return _nu_sylv(ctx, stmt, nu, lyap=True)
    if stmt.kind == "TRSM_left_transposed":
        out_v, coeff_v = stmt.out, stmt.ins[0]
        if ctx.logical_structure(coeff_v) is not Structure.LOWER_TRIANGULAR:
            raise NotDivisibleError("nu mapping needs a lower-logical solve")
        return _nu_trsm_left(ctx, out_v.op,
                             (ctx.offset(out_v.r), ctx.offset(out_v.c)),
                             coeff_v,
                             (ctx.offset(coeff_v.r), ctx.offset(coeff_v.c)),
                             ctx.extent(out_v.r), ctx.extent(out_v.c), nu,
                             coeff_lower=True)
    if stmt.kind == "ADD_SUB":
        raise NotDivisibleError("nu mapping does not cover plain additions")
    raise LoweringError(f"no nu materializer for {stmt.kind}")


# -- whole-program materialization ------------------------------------------------

def _copy_in_nodes(ctx):
    """Seed the output storage with the right-hand-side values."""
    n = ctx.n
    x = ctx.alg.output
    src = ctx.alg.rhs_source
    # symmetric outputs take a full seed (full square storage); triangular
    # outputs only seed their stored triangle so the zero region stays zero
    region = ("upper" if ctx.x_struct is Structure.UPPER_TRIANGULAR else
              "lower" if ctx.x_struct is Structure.LOWER_TRIANGULAR else
              "full")

    def entry(i, j):
        return [Prim("copy", (Acc(x, i, j), Acc(src, i, j)))]

    if region == "full":
        return _loop(ctx, 0, n, lambda i: _loop(ctx, 0, n,
                                                lambda j: entry(i, j)))
    if region == "upper":
        return _loop(ctx, 0, n, lambda i: _loop(ctx, i, n,
                                                lambda j: entry(i, j)))
    return _loop(ctx, 0, n, lambda i: _loop(ctx, 0, i + 1,
                                            lambda j: entry(i, j)))


def _mirror_nodes(ctx):
    """Materialize the alias (lower) triangle of a symmetric output."""
    n = ctx.n
    x = ctx.alg.output

    def entry(i, j):
        return [Prim("copy", (Acc(x, j, i), Acc(x, i, j)))]

    return _loop(ctx, 0, n, lambda i: _loop(ctx, i + 1, n,
                                            lambda j: entry(i, j)))


def _body_nodes(ctx, stmt):
    nu = ctx.options.nu
    if nu:
        return _nu_stmt(ctx, stmt, nu)
    if stmt.kind == "GEMM_update":
        nodes = _gemm_nodes(ctx, stmt)
    elif stmt.kind in ("TRSM_left_transposed", "TRSM_right"):
        nodes = _trsm_nodes(ctx, stmt)
    elif stmt.kind == "CHOL":
        nodes = _chol_nodes(ctx, stmt)
    elif stmt.kind == "SYLV":
        nodes = _sylv_nodes(ctx, stmt)
    elif stmt.kind == "LYAP":
        nodes = _lyap_nodes(ctx, stmt)
    elif stmt.kind == "ADD_SUB":
        nodes = _addsub_nodes(ctx, stmt)
    else:
        raise LoweringError(f"no materializer for {stmt.kind}")
    if ctx.options.tiles and not nu:
        nodes = _tile_stmt(ctx, nodes, ctx.options.tiles)
    return nodes


def _stmt_views(ctx, stmt):
    gathers = [_gs(ctx, v, "gather") for v in stmt.ins]
    accumulate = stmt.kind in ("GEMM_update", "ADD_SUB")
    if stmt.kind in ("CHOL", "SYLV", "LYAP", "TRSM_left_transposed",
                     "TRSM_right"):
        gathers.append(_gs(ctx, stmt.out, "gather"))
    scatters = [_gs(ctx, stmt.out, "scatter", accumulate=accumulate)]
    return tuple(gathers), tuple(scatters)


def _materialize(alg, n, b, options):
    if n % b:
        raise LoweringError(f"block size {b} does not divide {n}")
    nu = options.nu
    if nu and (b % nu or n % nu):
        raise NotDivisibleError(
            f"extents are not divisible by the vector length {nu}")
    if options.tiles and b % options.tiles:
        raise LoweringError(f"tile size {options.tiles} does not divide {b}")
    ctx = _Ctx(alg, n, b, options)
    prologue = [SigmaStmt("copy_in", "copy_in", tuple(_copy_in_nodes(ctx)),
                          scatters=(GatherScatter(
                              "scatter", alg.output, Aff.of(0), Aff.of(0),
                              Aff.of(n), Aff.of(n)),))]
    body = []
    for stmt in alg.statements:
        nodes = _body_nodes(ctx, stmt)
        if not nodes:
            continue
        gathers, scatters = _stmt_views(ctx, stmt)
        body.append(SigmaStmt("body", stmt.kind, tuple(nodes),
                              gathers, scatters, source=stmt))
    epilogue = []
    if alg.mirror_output:
        epilogue.append(SigmaStmt("mirror", "mirror", tuple(_mirror_nodes(ctx))))
    buffers = BUFFERS if nu else ()
    return SigmaProgram(f"{alg.name}_n{n}_b{b}", alg, n, b, options,
                        tuple(prologue), tuple(body), tuple(epilogue),
                        buffers)


def lower_algorithm(alg, n, b):
    """Blocked variant -> explicit-loop program at concrete sizes."""
    return _materialize(alg, n, b, Options())


def prune_structure(p):
    """Activate the affine constraints implied by operand structures."""
    return _materialize(p.algorithm, p.n, p.b, replace(p.options, pruned=True))


def tile(p, tiles):
    """Strip-mine rectangular update nests by `tiles` (must divide b)."""
    return _materialize(p.algorithm, p.n, p.b, replace(p.options, tiles=tiles))


def map_nu_kernels(p, nu):
    """Retarget the innermost computation onto the nu x nu kernel set."""
    return _materialize(p.algorithm, p.n, p.b, replace(p.options, nu=nu))


# --------------------------------------------------------------------------- #
# Interpretation
# --------------------------------------------------------------------------- #

NU_KERNELS = ("copy", "transpose", "mmacc", "addsub", "scale", "trsm",
              "chol", "sylv")


def _nu_flops(kernel, nu):
    if kernel in ("copy", "transpose"):
        return 0
    if kernel in ("addsub", "scale"):
        return nu * nu
    if kernel == "mmacc":
        return 2 * nu ** 3
    if kernel == "trsm":
        return nu ** 3
    if kernel == "sylv":
        return 2 * nu ** 3
    if kernel == "chol":
        return nu * (nu + 1) * (2 * nu + 1) // 6
    raise LoweringError(f"unknown kernel {kernel}")


class Instrumentation:
    """Records of structurally forbidden accesses during interpretation."""

    def __init__(self):
        self.zero_reads = []
        self.alias_writes = []

    @property
    def clean(self):
        return not self.zero_reads and not self.alias_writes


class _Machine:
    def __init__(self, prog, inst, instrument=False):
        self.prog = prog
        self.nu = prog.options.nu
        n = prog.n
        if inst.n != n:
            raise VerificationError("instance order does not match the program")
        self.storage = {name: m.copy() for name, m in inst.bindings.items()}
        self.storage[prog.algorithm.output] = np.zeros((n, n))
        for buf in prog.buffers:
            self.storage[buf] = np.zeros((self.nu, self.nu))
        self.flops = 0
        self.report = Instrumentation() if instrument else None
        if instrument:
            if self.nu:
                raise VerificationError(
                    "instrumentation covers scalar programs only")
            self._masks = {}
            b = prog.b
            eq = prog.algorithm.equation
            for op in eq.operands:
                zero = np.zeros((n, n), dtype=bool)
                alias = np.zeros((n, n), dtype=bool)
                tri = np.triu_indices(n, 1)
                if op.structure is Structure.LOWER_TRIANGULAR:
                    zero[tri] = True
                elif op.structure is Structure.UPPER_TRIANGULAR:
                    zero[(tri[1], tri[0])] = True
                elif op.structure.is_symmetric():
                    rows = np.arange(n) // b
                    alias = rows[:, None] > rows[None, :]
                self._masks[op.name] = (zero, alias)

    def _check_read(self, name, r, c):
        masks = self._masks.get(name)
        if masks is not None and masks[0][r, c]:
            self.report.zero_reads.append((name, r, c))

    def _check_write(self, name, r, c, is_copy):
        masks = self._masks.get(name)
        if masks is None:
            return
        zero, alias = masks
        if zero[r, c]:
            self.report.zero_reads.append(("write:" + name, r, c))
        if alias[r, c] and not is_copy:
            self.report.alias_writes.append((name, r, c))

    def run(self):
        env = {}
        for stmt in self.prog.prologue:
            self._nodes(stmt.nodes, env)
        for k in range(self.prog.iterations):
            env[K_VAR] = k
            for stmt in self.prog.body:
                self._nodes(stmt.nodes, env)
        env.pop(K_VAR, None)
        for stmt in self.prog.epilogue:
            self._nodes(stmt.nodes, env)
        x = self.prog.algorithm.output
        out = self.storage[x]
        if not np.all(np.isfinite(out)):
            raise VerificationError("NaN or Inf produced by the program")
        return {x: out}, self.flops

    def _nodes(self, nodes, env):
        for node in nodes:
            if isinstance(node, Loop):
                lo = node.lo.eval(env)
                hi = node.hi.eval(env)
                for v in range(lo, hi, node.step):
                    env[node.var] = v
                    self._nodes(node.body, env)
                env.pop(node.var, None)
            elif isinstance(node, Prim):
                self._prim(node, env)
            elif isinstance(node, NuCall):
                self._nucall(node, env)
            else:
                raise LoweringError(f"unknown node {node!r}")

    def _prim(self, prim, env):
        locs = [(a.op, a.r.eval(env), a.c.eval(env)) for a in prim.args]
        vals = [self.storage[n][r, c] for n, r, c in locs]
        out_n, out_r, out_c = locs[0]
        if self.report is not None:
            for n, r, c in locs[1:]:
                self._check_read(n, r, c)
            if prim.op in ("div", "sqrt", "sumdiv"):
                pass  # in-place reads of the destination are fine
            self._check_write(out_n, out_r, out_c, prim.op == "copy")
        if prim.op == "mulsub":
            result = vals[0] - vals[1] * vals[2]
        elif prim.op == "muladd":
            result = vals[0] + vals[1] * vals[2]
        elif prim.op == "div":
            result = vals[0] / vals[1]
        elif prim.op == "sumdiv":
            result = vals[0] / (vals[1] + vals[2])
        elif prim.op == "sqrt":
            if vals[0] < 0.0:
                raise VerificationError("negative value under sqrt")
            result = math.sqrt(vals[0])
        elif prim.op == "copy":
            result = vals[1]
        elif prim.op == "add":
            result = vals[0] + vals[1]
        elif prim.op == "sub":
            result = vals[0] - vals[1]
        else:
            raise LoweringError(f"unknown primitive {prim.op}")
        self.storage[out_n][out_r, out_c] = result
        self.flops += Prim.FLOPS[prim.op]

    def _tile_array(self, ref, env, writeback=False):
        nu = self.nu
        if ref.is_buffer:
            return self.storage[ref.op]
        r = ref.r.eval(env)
        c = ref.c.eval(env)
        return self.storage[ref.op][r:r + nu, c:c + nu]

    def _nucall(self, call, env):
        from . import kernels as K

        nu = self.nu
        tiles = [self._tile_array(t, env) for t in call.tiles]
        if call.kernel == "copy":
            tiles[0][...] = tiles[1]
        elif call.kernel == "transpose":
            tiles[0][...] = tiles[1].T
        elif call.kernel == "mmacc":
            if call.sign > 0:
                tiles[0] += tiles[1] @ tiles[2]
            else:
                tiles[0] -= tiles[1] @ tiles[2]
        elif call.kernel == "addsub":
            if call.sign > 0:
                tiles[0] += tiles[1]
            else:
                tiles[0] -= tiles[1]
        elif call.kernel == "scale":
            tiles[0] *= call.sign
        elif call.kernel == "trsm":
            K.trsm_left(tiles[0], tiles[1], lower=True)
        elif call.kernel == "chol":
            K.chol_leaf(tiles[0])
            tiles[0][np.tril_indices(nu, -1)] = 0.0
        elif call.kernel == "sylv":
            K.sylv_solve(tiles[1], tiles[2], tiles[0])
        else:
            raise LoweringError(f"unknown kernel {call.kernel}")
        self.flops += _nu_flops(call.kernel, nu)


def interpret_sigma(prog, inst, instrument=False):
    """Execute the program; returns (outputs, flops) or, when instrumenting,
    (outputs, flops, Instrumentation)."""
    machine = _Machine(prog, inst, instrument=instrument)
    outputs, flops = machine.run()
    if instrument:
        return outputs, flops, machine.report
    return outputs, flops


# --------------------------------------------------------------------------- #
# Debug dump
# --------------------------------------------------------------------------- #

def _max_depth(nodes):
    best = 0
    for node in nodes:
        if isinstance(node, Loop):
            best = max(best, 1 + _max_depth(node.body))
    return best


def _domain_summary(nodes, out=None):
    if out is None:
        out = []
    for node in nodes:
        if isinstance(node, Loop):
            step = f" step {node.step}" if node.step != 1 else ""
            out.append(f"{node.lo.render()}<={node.var}<{node.hi.render()}{step}")
            _domain_summary(node.body, out)
    return out


def format_sigma_dump(prog):
    """One line per statement: for-depth | domain | op | gathers | scatters."""
    lines = [f"program {prog.name} mode={prog.mode} pruned={prog.options.pruned}"
             f" tiles={prog.options.tiles}"]
    for stmt in prog.statements():
        depth = _max_depth(stmt.nodes) + (1 if stmt.tag == "body" else 0)
        domain = "; ".join(_domain_summary(stmt.nodes)[:4])
        if stmt.tag == "body":
            domain = f"0<=k<{prog.iterations}; " + domain
        gathers = " ".join(g.render() for g in stmt.gathers) or "-"
        scatters = " ".join(s.render() for s in stmt.scatters) or "-"
        lines.append(f"{depth} | {domain} | {stmt.op} | {gathers} | {scatters}")
    return "\n".join(lines) + "\n"
