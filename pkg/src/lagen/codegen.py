"""Emission of size-specialized C99 kernels, the micro-kernel header, and
standalone benchmark harnesses.

Generated functions take each input operand as a const pointer and each
output as a mutable pointer, all flat row-major with leading dimension n.
Output buffers must be zero-initialized by the caller (the harness uses
calloc); kernels only store to the structurally nonzero region.
"""

import re
from dataclasses import dataclass

from .errors import LagenError, LoweringError
from .lang import Ref, Structure, Transpose
from .lowering import K_VAR, Loop, NuCall, Prim, TileRef

SUPPORTED_NU = (2, 4, 8)
GUARD_TOL = 1e-10


@dataclass(frozen=True)
class EmittedSource:
    name: str
    kind: str                 # kernel | header | harness
    text: str
    params: tuple = ()        # (operand name, "in" | "out") in call order
    n: int = None
    flops: int = None
    nu: int = None
    equation: object = None


# --------------------------------------------------------------------------- #
# Expression rendering
# --------------------------------------------------------------------------- #

def _c_aff(aff):
    parts = []
    for v, c in aff.terms:
        if c == 1:
            parts.append(v)
        elif c == -1:
            parts.append(f"-{v}")
        else:
            parts.append(f"{c}*{v}")
    if aff.const or not parts:
        parts.append(str(aff.const))
    text = " + ".join(parts).replace("+ -", "- ")
    return text


def _acc(a, n):
    flat = a.r.scaled(n) + a.c
    return f"{a.op}[{_c_aff(flat)}]"


def _prim_line(p, n):
    a = [_acc(x, n) for x in p.args]
    if p.op == "mulsub":
        return f"{a[0]} -= {a[1]} * {a[2]};"
    if p.op == "muladd":
        return f"{a[0]} += {a[1]} * {a[2]};"
    if p.op == "div":
        return f"{a[0]} /= {a[1]};"
    if p.op == "sumdiv":
        return f"{a[0]} /= {a[1]} + {a[2]};"
    if p.op == "sqrt":
        return f"{a[0]} = sqrt({a[0]});"
    if p.op == "copy":
        return f"{a[0]} = {a[1]};"
    if p.op == "add":
        return f"{a[0]} += {a[1]};"
    if p.op == "sub":
        return f"{a[0]} -= {a[1]};"
    raise LoweringError(f"cannot emit primitive {p.op}")


def _tile_arg(t, n, nu):
    if t.is_buffer:
        return f"{t.op}, {nu}"
    flat = t.r.scaled(n) + t.c
    return f"&{t.op}[{_c_aff(flat)}], {n}"


def _nucall_line(call, n, nu):
    args = ", ".join(_tile_arg(t, n, nu) for t in call.tiles)
    if call.kernel in ("mmacc", "addsub"):
        return f"nu_{call.kernel}_{nu}({args}, {call.sign});"
    if call.kernel == "scale":
        return f"nu_scale_{nu}({args}, {call.sign}.0);"
    return f"nu_{call.kernel}_{nu}({args});"


def _subst_nodes(nodes, var, value):
    out = []
    for node in nodes:
        if isinstance(node, Loop):
            out.append(Loop(node.var, node.lo.subst(var, value),
                            node.hi.subst(var, value), node.step,
                            tuple(_subst_nodes(node.body, var, value))))
        elif isinstance(node, Prim):
            out.append(Prim(node.op, tuple(
                type(a)(a.op, a.r.subst(var, value), a.c.subst(var, value))
                for a in node.args)))
        elif isinstance(node, NuCall):
            out.append(NuCall(node.kernel, tuple(
                t if t.is_buffer else TileRef(t.op, t.r.subst(var, value),
                                              t.c.subst(var, value))
                for t in node.tiles), node.sign))
        else:
            raise LoweringError(f"unknown node {node!r}")
    return out


def _emit_nodes(nodes, n, nu, indent, out, unroll):
    pad = "    " * indent
    for node in nodes:
        if isinstance(node, Loop):
            lo, hi = node.lo, node.hi
            if lo.is_const and hi.is_const:
                trips = max(0, -(-(hi.const - lo.const) // node.step))
                if trips == 0:
                    continue
                if trips == 1 or (unroll and trips * node.step <= 8):
                    for v in range(lo.const, hi.const, node.step):
                        _emit_nodes(_subst_nodes(node.body, node.var, v),
                                    n, nu, indent, out, unroll)
                    continue
            step = f"{node.var} += {node.step}" if node.step != 1 \
                else f"++{node.var}"
            out.append(f"{pad}for (int {node.var} = {_c_aff(lo)}; "
                       f"{node.var} < {_c_aff(hi)}; {step}) {{")
            _emit_nodes(node.body, n, nu, indent + 1, out, unroll)
            out.append(f"{pad}}}")
        elif isinstance(node, Prim):
            out.append(pad + _prim_line(node, n))
        elif isinstance(node, NuCall):
            out.append(pad + _nucall_line(node, n, nu))
        else:
            raise LoweringError(f"unknown node {node!r}")


def _signature(prog):
    eq = prog.algorithm.equation
    params = []
    for op in eq.operands:
        if not op.is_output:
            params.append((op.name, "in"))
    for op in eq.operands:
        if op.is_output:
            params.append((op.name, "out"))
    return params


def emit_function(prog, unroll_leaf=False):
    """Render the program as one self-contained C function.

    Loops with constant trip count one are folded away; with `unroll_leaf`
    every constant-bound loop of extent at most 8 (the inlined base cases at
    small block sizes) is fully unrolled.
    """
    n = prog.n
    nu = prog.options.nu
    params = _signature(prog)
    args = ", ".join(
        f"{'const double* ' if role == 'in' else 'double* '}{name}"
        for name, role in params)
    fname = prog.name.replace("(", "").replace(")", "")
    body = []
    for stmt in prog.prologue:
        _emit_nodes(stmt.nodes, n, nu, 1, body, unroll_leaf)
    iters = prog.iterations
    if iters == 1:
        for stmt in prog.body:
            _emit_nodes(_subst_nodes(stmt.nodes, K_VAR, 0), n, nu, 1, body,
                        unroll_leaf)
    else:
        body.append(f"    for (int {K_VAR} = 0; {K_VAR} < {iters}; ++{K_VAR}) {{")
        for stmt in prog.body:
            _emit_nodes(stmt.nodes, n, nu, 2, body, unroll_leaf)
        body.append("    }")
    for stmt in prog.epilogue:
        _emit_nodes(stmt.nodes, n, nu, 1, body, unroll_leaf)
    lines = [f"void {fname}({args}) {{"]
    body_text = "\n".join(body)
    for buf in prog.buffers:
        # loop folding can eliminate every use of a scratch tile
        if re.search(rf"\b{buf}\b", body_text):
            lines.append(f"    double {buf}[{nu * nu}];")
    lines.extend(body)
    lines.append("}")

    includes = ["#include <math.h>"]
    if nu:
        includes.append(f'#include "nu_kernels_{nu}.h"')
    text = "\n".join(includes) + "\n\n" + "\n".join(lines) + "\n"
    from .worksheet import flop_count

    return EmittedSource(fname, "kernel", text, tuple(params), n,
                         flop_count(prog.algorithm, n, prog.b), nu,
                         prog.algorithm.equation)


# --------------------------------------------------------------------------- #
# Micro-kernel header (scalar reference bodies)
# --------------------------------------------------------------------------- #

def emit_nu_kernel_header(nu):
    """The fixed kernel set with scalar reference bodies.

    The names `nu_<op>_<nu>` are the substitution point for vectorized
    implementations: replacing this header with intrinsic bodies requires no
    change to emitted kernels.
    """
    if nu not in SUPPORTED_NU:
        raise LagenError(f"unsupported vector length {nu}; pick one of "
                         f"{SUPPORTED_NU}")
    v = nu
    t = []
    t.append(f"#ifndef NU_KERNELS_{v}_H")
    t.append(f"#define NU_KERNELS_{v}_H")
    t.append("")
    t.append("#include <math.h>")
    t.append("")
    t.append(f"/* {v}x{v} tile kernels, scalar reference bodies. */")
    t.append("")
    t.append(f"static inline void nu_copy_{v}(double* d, int ldd, "
             "const double* s, int lds) {")
    t.append(f"    for (int i = 0; i < {v}; ++i)")
    t.append(f"        for (int j = 0; j < {v}; ++j)")
    t.append("            d[i*ldd + j] = s[i*lds + j];")
    t.append("}")
    t.append("")
    t.append(f"static inline void nu_transpose_{v}(double* d, int ldd, "
             "const double* s, int lds) {")
    t.append(f"    for (int i = 0; i < {v}; ++i)")
    t.append(f"        for (int j = 0; j < {v}; ++j)")
    t.append("            d[i*ldd + j] = s[j*lds + i];")
    t.append("}")
    t.append("")
    t.append(f"static inline void nu_mmacc_{v}(double* c, int ldc, "
             "const double* a, int lda, const double* b, int ldb, int sign) {")
    t.append(f"    for (int i = 0; i < {v}; ++i)")
    t.append(f"        for (int j = 0; j < {v}; ++j) {{")
    t.append("            double acc = 0.0;")
    t.append(f"            for (int k = 0; k < {v}; ++k)")
    t.append("                acc += a[i*lda + k] * b[k*ldb + j];")
    t.append("            c[i*ldc + j] += sign > 0 ? acc : -acc;")
    t.append("        }")
    t.append("}")
    t.append("")
    t.append(f"static inline void nu_addsub_{v}(double* d, int ldd, "
             "const double* s, int lds, int sign) {")
    t.append(f"    for (int i = 0; i < {v}; ++i)")
    t.append(f"        for (int j = 0; j < {v}; ++j)")
    t.append("            d[i*ldd + j] += sign > 0 ? s[i*lds + j] "
             ": -s[i*lds + j];")
    t.append("}")
    t.append("")
    t.append(f"static inline void nu_scale_{v}(double* d, int ldd, "
             "double alpha) {")
    t.append(f"    for (int i = 0; i < {v}; ++i)")
    t.append(f"        for (int j = 0; j < {v}; ++j)")
    t.append("            d[i*ldd + j] *= alpha;")
    t.append("}")
    t.append("")
    t.append("/* forward substitution, T logically lower triangular */")
    t.append(f"static inline void nu_trsm_{v}(const double* t, int ldt, "
             "double* x, int ldx) {")
    t.append(f"    for (int j = 0; j < {v}; ++j)")
    t.append(f"        for (int i = 0; i < {v}; ++i) {{")
    t.append("            for (int k = 0; k < i; ++k)")
    t.append("                x[i*ldx + j] -= t[i*ldt + k] * x[k*ldx + j];")
    t.append("            x[i*ldx + j] /= t[i*ldt + i];")
    t.append("        }")
    t.append("}")
    t.append("")
    t.append("/* in-place upper factor; the strict lower triangle is zeroed */")
    t.append(f"static inline void nu_chol_{v}(double* a, int lda) {{")
    t.append(f"    for (int i = 0; i < {v}; ++i) {{")
    t.append("        a[i*lda + i] = sqrt(a[i*lda + i]);")
    t.append(f"        for (int j = i + 1; j < {v}; ++j)")
    t.append("            a[i*lda + j] /= a[i*lda + i];")
    t.append(f"        for (int r = i + 1; r < {v}; ++r)")
    t.append(f"            for (int c = r; c < {v}; ++c)")
    t.append("                a[r*lda + c] -= a[i*lda + r] * a[i*lda + c];")
    t.append("    }")
    t.append(f"    for (int i = 1; i < {v}; ++i)")
    t.append("        for (int j = 0; j < i; ++j)")
    t.append("            a[i*lda + j] = 0.0;")
    t.append("}")
    t.append("")
    t.append("/* L X + X U = C in place; l lower, u upper */")
    t.append(f"static inline void nu_sylv_{v}(double* x, int ldx, "
             "const double* l, int ldl, const double* u, int ldu) {")
    t.append(f"    for (int j = 0; j < {v}; ++j) {{")
    t.append(f"        for (int i = 0; i < {v}; ++i)")
    t.append("            for (int k = 0; k < j; ++k)")
    t.append("                x[i*ldx + j] -= x[i*ldx + k] * u[k*ldu + j];")
    t.append(f"        for (int i = 0; i < {v}; ++i) {{")
    t.append("            for (int k = 0; k < i; ++k)")
    t.append("                x[i*ldx + j] -= l[i*ldl + k] * x[k*ldx + j];")
    t.append("            x[i*ldx + j] /= l[i*ldl + i] + u[j*ldu + j];")
    t.append("        }")
    t.append("    }")
    t.append("}")
    t.append("")
    t.append(f"#endif /* NU_KERNELS_{v}_H */")
    return EmittedSource(f"nu_kernels_{v}", "header", "\n".join(t) + "\n",
                         nu=nu)


# --------------------------------------------------------------------------- #
# Benchmark harness
# --------------------------------------------------------------------------- #

def _residual_code(eq):
    """C statements computing the relative equation residual into `res`."""
    temps = []
    lines = []

    def fresh():
        temps.append(f"t{len(temps)}")
        return temps[-1]

    def emit(expr):
        if isinstance(expr, Ref):
            return expr.name, False
        if isinstance(expr, Transpose):
            src, owned = emit(expr.arg)
            dst = fresh()
            lines.append(f"    mat_transpose({dst}, {src}, n);")
            return dst, True
        from .lang import Add, Mul, Neg

        if isinstance(expr, Neg):
            src, _ = emit(expr.arg)
            dst = fresh()
            lines.append(f"    mat_scale({dst}, {src}, -1.0, n);")
            return dst, True
        left, _ = emit(expr.left)
        right, _ = emit(expr.right)
        dst = fresh()
        if isinstance(expr, Mul):
            lines.append(f"    mat_mul({dst}, {left}, {right}, n);")
        elif isinstance(expr, Add):
            lines.append(f"    mat_add({dst}, {left}, {right}, 1.0, n);")
        else:
            lines.append(f"    mat_add({dst}, {left}, {right}, -1.0, n);")
        return dst, True

    lhs, _ = emit(eq.lhs)
    rhs, _ = emit(eq.rhs)
    lines.append(f"    double res = mat_residual({lhs}, {rhs}, n);")
    return temps, lines


_RUNTIME_PIECES = {
    "rng": r"""
static unsigned long long sm_state;

static unsigned long long sm_next(void) {
    sm_state += 0x9E3779B97F4A7C15ULL;
    unsigned long long z = sm_state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

static double sm_uniform(double lo, double hi) {
    double u = (double)(sm_next() >> 11) * (1.0 / 9007199254740992.0);
    return lo + (hi - lo) * u;
}
""",
    "fill_general": r"""
static void fill_general(double* m, int n) {
    for (int i = 0; i < n * n; ++i) m[i] = sm_uniform(-1.0, 1.0);
}
""",
    "fill_lower": r"""
static void fill_lower(double* m, int n) {
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            m[i*n + j] = j < i ? sm_uniform(-1.0, 1.0) : 0.0;
    for (int i = 0; i < n; ++i) m[i*n + i] = sm_uniform(1.0, 2.0);
}
""",
    "fill_upper": r"""
static void fill_upper(double* m, int n) {
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            m[i*n + j] = j > i ? sm_uniform(-1.0, 1.0) : 0.0;
    for (int i = 0; i < n; ++i) m[i*n + i] = sm_uniform(1.0, 2.0);
}
""",
    "fill_symmetric": r"""
static void fill_symmetric(double* m, int n) {
    fill_general(m, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < i; ++j) {
            double v = 0.5 * (m[i*n + j] + m[j*n + i]);
            m[i*n + j] = v;
            m[j*n + i] = v;
        }
}
""",
    "fill_spd": r"""
static void fill_spd(double* m, int n) {
    double* b = malloc((size_t)n * n * sizeof(double));
    fill_general(b, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int k = 0; k < n; ++k) acc += b[k*n + i] * b[k*n + j];
            m[i*n + j] = acc + (i == j ? (double)n : 0.0);
        }
    free(b);
}
""",
    "mat_mul": r"""
static void mat_mul(double* d, const double* a, const double* b, int n) {
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int k = 0; k < n; ++k) acc += a[i*n + k] * b[k*n + j];
            d[i*n + j] = acc;
        }
}
""",
    "mat_add": r"""
static void mat_add(double* d, const double* a, const double* b,
                    double sb, int n) {
    for (int i = 0; i < n * n; ++i) d[i] = a[i] + sb * b[i];
}
""",
    "mat_transpose": r"""
static void mat_transpose(double* d, const double* s, int n) {
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) d[i*n + j] = s[j*n + i];
}
""",
    "mat_scale": r"""
static void mat_scale(double* d, const double* s, double alpha, int n) {
    for (int i = 0; i < n * n; ++i) d[i] = alpha * s[i];
}
""",
    "mat_residual": r"""
static double mat_residual(const double* lhs, const double* rhs, int n) {
    double num = 0.0, den = 0.0;
    for (int i = 0; i < n * n; ++i) {
        double diff = lhs[i] - rhs[i];
        num += diff * diff;
        den += rhs[i] * rhs[i];
    }
    den = sqrt(den);
    if (den < 1.0) den = 1.0;
    return sqrt(num) / den;
}
""",
    "timing": r"""
static long long median_ll(long long* v, int count) {
    for (int i = 1; i < count; ++i)
        for (int j = i; j > 0 && v[j-1] > v[j]; --j) {
            long long tmp = v[j]; v[j] = v[j-1]; v[j-1] = tmp;
        }
    if (count % 2) return v[count / 2];
    return (v[count / 2 - 1] + v[count / 2]) / 2;
}

static long long now_ns(void) {
    struct timespec ts;
    clock_gettime(CLOCK_MONOTONIC, &ts);
    return (long long)ts.tv_sec * 1000000000LL + ts.tv_nsec;
}
""",
}

_RUNTIME_ORDER = ("rng", "fill_general", "fill_lower", "fill_upper",
                  "fill_symmetric", "fill_spd", "mat_mul", "mat_add",
                  "mat_transpose", "mat_scale", "mat_residual", "timing")


def _runtime_code(fill_names, residual_lines):
    needed = {"rng", "mat_residual", "timing"}
    needed.update(fill_names)
    if "fill_symmetric" in needed or "fill_spd" in needed:
        needed.add("fill_general")
    text = "\n".join(residual_lines)
    for helper in ("mat_mul", "mat_add", "mat_transpose", "mat_scale"):
        if helper + "(" in text:
            needed.add(helper)
    return "".join(_RUNTIME_PIECES[k] for k in _RUNTIME_ORDER if k in needed)



def emit_bench_harness(fn, sizes, reps, seed=42):
    """Standalone benchmark program around one emitted kernel.

    Inputs are seeded deterministically honoring the declared structures; one
    warm-up run feeds a residual guard before any timing; the program prints
    one `RESULT <name> <n> <median_ns> <flops>` line per size.  Kernels are
    size-specialized, so every requested size must equal the kernel's.
    """
    if fn.kind != "kernel":
        raise LagenError("harness wraps emitted kernels")
    for n in sizes:
        if n != fn.n:
            raise LagenError(
                f"kernel {fn.name} is specialized for n={fn.n}; "
                f"cannot benchmark n={n}")
    eq = fn.equation
    n = fn.n
    fills = {
        Structure.GENERAL: "fill_general",
        Structure.LOWER_TRIANGULAR: "fill_lower",
        Structure.UPPER_TRIANGULAR: "fill_upper",
        Structure.SYMMETRIC: "fill_symmetric",
        Structure.SPD: "fill_spd",
    }
    temps, residual_lines = _residual_code(eq)
    fill_names = {fills[eq.operand(name).structure]
                  for name, role in fn.params if role == "in"}
    t = []
    t.append("#define _POSIX_C_SOURCE 199309L")
    t.append("#include <stdio.h>")
    t.append("#include <stdlib.h>")
    t.append("#include <time.h>")
    t.append("")
    t.append(fn.text)
    t.append(_runtime_code(fill_names, residual_lines))
    t.append("#ifdef MEDIAN_SELFTEST")
    t.append("int main(void) {")
    t.append("    long long v[3] = {5, 100, 7};")
    t.append('    printf("MEDIAN %lld\\n", median_ll(v, 3));')
    t.append("    return 0;")
    t.append("}")
    t.append("#else")
    t.append("int main(void) {")
    t.append(f"    const int n = {n};")
    t.append(f"    const int reps = {reps};")
    t.append(f"    sm_state = {seed}ULL;")
    for name, role in fn.params:
        t.append(f"    double* {name} = calloc((size_t)n * n, "
                 "sizeof(double));")
    for name, role in fn.params:
        if role == "in":
            struct = eq.operand(name).structure
            t.append(f"    {fills[struct]}({name}, n);")
    for tmp in temps:
        t.append(f"    double* {tmp} = calloc((size_t)n * n, "
                 "sizeof(double));")
    call = ", ".join(name for name, _ in fn.params)
    t.append(f"    {fn.name}({call});  /* warm-up */")
    t.extend(residual_lines)
    t.append(f"    if (res > {GUARD_TOL:g}) {{")
    t.append('        fprintf(stderr, "GUARD residual %g exceeds '
             f'{GUARD_TOL:g}\\n", res);')
    t.append("        return 1;")
    t.append("    }")
    t.append("    long long* times = calloc((size_t)reps, sizeof(long long));")
    t.append(f"    for (int sizes_idx = 0; sizes_idx < {len(sizes)}; "
             "++sizes_idx) {")
    t.append("        for (int r = 0; r < reps; ++r) {")
    t.append("            long long start = now_ns();")
    t.append(f"            {fn.name}({call});")
    t.append("            times[r] = now_ns() - start;")
    t.append("        }")
    t.append(f'        printf("RESULT {fn.name} %d %lld {fn.flops}\\n", n, '
             "median_ll(times, reps));")
    t.append("    }")
    free_names = [name for name, _ in fn.params] + temps + ["times"]
    for name in free_names:
        t.append(f"    free({name});")
    t.append("    return 0;")
    t.append("}")
    t.append("#endif")
    return EmittedSource(f"{fn.name}_bench", "harness", "\n".join(t) + "\n",
                         fn.params, n, fn.flops, fn.nu)
