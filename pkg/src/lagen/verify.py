"""Numerical ground truth: structured random instances, independent oracles
for the three equation classes, residual metrics, and interpreters.

Everything here is deliberately separate from the synthesis pipeline so it
can serve as an oracle for it: the Cholesky oracle is the textbook unblocked
factorization, and the Sylvester/Lyapunov oracle assembles the Kronecker
linear system and solves it densely.
"""

import math

import numpy as np

from .errors import VerificationError
from .lang import Add, Mul, Neg, Ref, Structure, Sub, Transpose
from .rng import Stream


# --------------------------------------------------------------------------- #
# Expression evaluation over dense bindings
# --------------------------------------------------------------------------- #

def eval_expr(expr, bindings, operand_map=None):
    if isinstance(expr, Ref):
        return bindings[expr.name]
    if isinstance(expr, Transpose):
        return eval_expr(expr.arg, bindings, operand_map).T
    if isinstance(expr, Neg):
        return -eval_expr(expr.arg, bindings, operand_map)
    left = eval_expr(expr.left, bindings, operand_map)
    right = eval_expr(expr.right, bindings, operand_map)
    if isinstance(expr, Add):
        return left + right
    if isinstance(expr, Sub):
        return left - right
    return left @ right


# --------------------------------------------------------------------------- #
# Instances
# --------------------------------------------------------------------------- #

class Instance:
    """Concrete input bindings for one equation at one size."""

    def __init__(self, equation, n, seed, bindings):
        self.equation = equation
        self.n = n
        self.seed = seed
        self.bindings = bindings

    def copy_bindings(self):
        return {k: v.copy() for k, v in self.bindings.items()}


def _fill(stream, n, m):
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            out[i, j] = stream.uniform(-1.0, 1.0)
    return out


def random_instance(eq, n, seed):
    """Deterministic, well-posed inputs for `eq` at order `n`.

    SPD operands are built as B^T B + n I; triangular operands get diagonals
    in [1, 2] so diag(L) + diag(U) >= 2 entrywise, keeping triangular solves
    and Sylvester spectra comfortably away from singularity.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    root = Stream(seed)
    bindings = {}
    for op in eq.operands:
        if op.is_output:
            continue
        stream = root.split(f"{eq.name}/{op.name}/{n}")
        if op.structure is Structure.SPD:
            b = _fill(stream, n, n)
            a = b.T @ b
            a = (a + a.T) / 2 + n * np.eye(n)
            bindings[op.name] = a
        elif op.structure is Structure.LOWER_TRIANGULAR:
            m = np.tril(_fill(stream, n, n), -1)
            for i in range(n):
                m[i, i] = stream.uniform(1.0, 2.0)
            bindings[op.name] = m
        elif op.structure is Structure.UPPER_TRIANGULAR:
            m = np.triu(_fill(stream, n, n), 1)
            for i in range(n):
                m[i, i] = stream.uniform(1.0, 2.0)
            bindings[op.name] = m
        elif op.structure is Structure.SYMMETRIC:
            m = _fill(stream, n, n)
            bindings[op.name] = (m + m.T) / 2
        else:
            bindings[op.name] = _fill(stream, n, n)
    for name, m in bindings.items():
        if not np.all(np.isfinite(m)):
            raise VerificationError(f"non-finite entries generated for {name}")
    return Instance(eq, n, seed, bindings)


# --------------------------------------------------------------------------- #
# Oracles
# --------------------------------------------------------------------------- #

def _chol_upper_textbook(a):
    """Unblocked bordered Cholesky, X^T X = A with X upper triangular."""
    n = a.shape[0]
    x = np.zeros_like(a)
    for i in range(n):
        s = a[i, i] - float(x[:i, i] @ x[:i, i])
        if s <= 0.0:
            raise VerificationError(f"matrix not positive definite at pivot {i}")
        x[i, i] = math.sqrt(s)
        for j in range(i + 1, n):
            x[i, j] = (a[i, j] - float(x[:i, i] @ x[:i, j])) / x[i, i]
    return x


def _kron_solve(l, u, c):
    """Solve L X + X U = C through the vec-form Kronecker system."""
    n = l.shape[0]
    big = np.kron(np.eye(n), l) + np.kron(u.T, np.eye(n))
    try:
        vec = np.linalg.solve(big, c.flatten(order="F"))
    except np.linalg.LinAlgError as err:
        raise VerificationError(f"singular Kronecker system: {err}") from err
    return vec.reshape((n, n), order="F")


def classify(eq):
    """Which of the supported equation classes `eq` belongs to.

    Returns "chol", "lyap", "sylv", or None.  Matching is structural on the
    transpose-normalized equation with a single unknown.
    """
    from .lang import transpose_normal

    if len(eq.unknowns) != 1:
        return None
    (x,) = eq.unknowns
    omap = eq.operand_map
    lhs = transpose_normal(eq.lhs, omap)
    rhs = eq.rhs
    if not isinstance(rhs, Ref):
        return None
    if lhs == Mul(Transpose(Ref(x)), Ref(x)) and omap[rhs.name].structure is Structure.SPD:
        return "chol"
    if isinstance(lhs, Add) and isinstance(lhs.left, Mul) and isinstance(lhs.right, Mul):
        l_term, r_term = lhs.left, lhs.right
        if (l_term.right == Ref(x) and r_term.left == Ref(x)
                and isinstance(l_term.left, Ref)):
            coeff = l_term.left.name
            if r_term.right == transpose_normal(Transpose(Ref(coeff)), omap):
                return "lyap"
            return "sylv"
    return None


def oracle_solve(inst):
    """Reference solution of the instance, independent of the generator."""
    eq = inst.equation
    kind = classify(eq)
    (x_name,) = eq.unknowns
    b = inst.bindings
    if kind == "chol":
        a = b[eq.rhs.name]
        return {x_name: _chol_upper_textbook(a)}
    if kind == "sylv":
        lhs = eq.lhs
        l = b[lhs.left.left.name]
        u = b[lhs.right.right.name]
        c = b[eq.rhs.name]
        return {x_name: _kron_solve(l, u, c)}
    if kind == "lyap":
        l = b[eq.lhs.left.left.name]
        s = b[eq.rhs.name]
        x = _kron_solve(l, l.T, s)
        return {x_name: (x + x.T) / 2}
    raise VerificationError(f"no oracle for equation {eq.name!r}")


def residual(eq, inst, outputs):
    """Relative equation residual ||lhs - rhs||_F / max(1, ||rhs||_F)."""
    bindings = dict(inst.bindings)
    bindings.update(outputs)
    lhs = eval_expr(eq.lhs, bindings, eq.operand_map)
    rhs = eval_expr(eq.rhs, bindings, eq.operand_map)
    if lhs.shape != rhs.shape:
        raise VerificationError("output shapes do not match the equation")
    denom = max(1.0, float(np.linalg.norm(rhs)))
    return float(np.linalg.norm(lhs - rhs)) / denom


# --------------------------------------------------------------------------- #
# Algorithm interpretation
# --------------------------------------------------------------------------- #

def _copy_region_for(structure):
    if structure is Structure.LOWER_TRIANGULAR:
        return "lower"
    if structure is Structure.UPPER_TRIANGULAR:
        return "upper"
    return "full"


def _logical_lower(view, operand_map):
    s = operand_map[view.op].structure
    if view.trans:
        s = s.transposed()
    if s is Structure.LOWER_TRIANGULAR:
        return True
    if s is Structure.UPPER_TRIANGULAR:
        return False
    raise VerificationError(f"coefficient view {view.display()} is not triangular")


def interpret_algorithm(alg, inst, b, on_iteration=None):
    """Execute a blocked variant on dense storage.

    Returns (outputs, flops).  The unknown's storage doubles as the working
    right-hand side: the seed values are copied in, every statement operates
    in place, and symmetric outputs get their lower triangle mirrored from
    the stored upper one at the end.
    """
    from . import kernels as K

    eq = alg.equation
    n = inst.n
    if n % b:
        raise VerificationError(f"block size {b} does not divide {n}")
    omap = eq.operand_map
    x_struct = omap[alg.output].structure
    work = np.zeros((n, n))
    K.copy_region(work, inst.bindings[alg.rhs_source],
                  _copy_region_for(x_struct))
    data = dict(inst.bindings)
    data[alg.output] = work
    sym_target = omap[alg.rhs_source].structure.is_symmetric()
    flops = 0

    for k in range(n // b):
        starts = (0, k * b, (k + 1) * b)
        ends = (k * b, (k + 1) * b, n)

        def arr(view):
            m = data[view.op][starts[view.r]:ends[view.r],
                              starts[view.c]:ends[view.c]]
            return m.T if view.trans else m

        def gather(view):
            m = arr(view)
            # diagonal cells of a symmetric output are materialized in the
            # upper triangle only; reads reconstruct the alias region from it
            if (view.op == alg.output and x_struct.is_symmetric()
                    and view.r == view.c and m.shape[0] > 1):
                m = np.triu(m) + np.triu(m, 1).T
            return m

        for stmt in alg.statements:
            if stmt.out.op != alg.output:
                raise VerificationError("statement writes outside the output")
            out = arr(stmt.out)
            if out.size == 0:
                continue
            if stmt.kind == "GEMM_update":
                upper = sym_target and stmt.out.r == stmt.out.c
                flops += K.gemm_update(out, gather(stmt.ins[0]),
                                       gather(stmt.ins[1]),
                                       stmt.sign, upper_target=upper)
            elif stmt.kind == "ADD_SUB":
                if stmt.ins:
                    flops += K.addsub_update(out, gather(stmt.ins[0]), stmt.sign)
                elif stmt.sign < 0:
                    out *= -1.0
                    flops += out.size
            elif stmt.kind == "CHOL":
                flops += K.chol_leaf(out)
            elif stmt.kind == "TRSM_left_transposed":
                coeff = gather(stmt.ins[0])
                flops += K.trsm_left(coeff, out,
                                     lower=_logical_lower(stmt.ins[0], omap))
            elif stmt.kind == "TRSM_right":
                coeff = gather(stmt.ins[0])
                flops += K.trsm_right(out, coeff,
                                      upper=not _logical_lower(stmt.ins[0], omap))
            elif stmt.kind == "SYLV":
                flops += K.sylv_solve(gather(stmt.ins[0]), gather(stmt.ins[1]), out)
            elif stmt.kind == "LYAP":
                flops += K.lyap_solve(gather(stmt.ins[0]), out)
            else:
                raise VerificationError(f"cannot interpret {stmt.kind}")
        if on_iteration is not None:
            on_iteration(k, work)

    if x_struct.is_symmetric():
        K.mirror_lower(work)
    if not np.all(np.isfinite(work)):
        raise VerificationError("NaN or Inf produced: ill-posed instance or bug")
    return {alg.output: work}, flops


def interpret(program, inst, b=None, **kw):
    """Execute an Algorithm (requires b) or a loop-level program."""
    from .worksheet import Algorithm

    if isinstance(program, Algorithm):
        if b is None:
            raise VerificationError("interpreting an Algorithm requires b")
        return interpret_algorithm(program, inst, b, **kw)
    from .lowering import interpret_sigma

    return interpret_sigma(program, inst, **kw)
