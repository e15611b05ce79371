import ctypes
import re
import shutil
import subprocess
import tempfile
from pathlib import Path

import numpy as np
import pytest

from lagen.codegen import (
    EmittedSource,
    emit_bench_harness,
    emit_function,
    emit_nu_kernel_header,
)
from lagen.errors import LagenError
from lagen.lang import parse_equation
from lagen.lowering import lower_algorithm, map_nu_kernels, prune_structure, tile
from lagen.verify import interpret_algorithm, random_instance
from lagen.worksheet import enumerate_algorithms

from cases import CHOLESKY, LYAPUNOV, SYLVESTER


def _cc():
    import os

    return os.environ.get("LAGEN_CC") or shutil.which("cc") or shutil.which("gcc")


needs_cc = pytest.mark.skipif(_cc() is None, reason="no C toolchain")


def _chol_prog(n=4, b=4, pruned=True):
    eq = parse_equation(CHOLESKY, name="chol")
    alg = next(a for a in enumerate_algorithms(eq)
               if a.invariant.computed == {"T1", "T2", "T3"})
    prog = lower_algorithm(alg, n, b)
    return prune_structure(prog) if pruned else prog


def test_emission_is_deterministic():
    a = emit_function(_chol_prog(8, 4), unroll_leaf=True)
    b = emit_function(_chol_prog(8, 4), unroll_leaf=True)
    assert a.text == b.text


def test_scalar_chol_never_stores_lower_triangle():
    fn = emit_function(_chol_prog(4, 4), unroll_leaf=True)
    n = 4
    stores = re.findall(r"^\s*X\[(\d+)\]\s*(?:[-+*/]?=)", fn.text, re.M)
    assert stores
    for flat in stores:
        r, c = divmod(int(flat), n)
        assert r <= c, f"store to strictly-lower X[{r},{c}]"


def test_trip_count_one_loops_fold():
    fn = emit_function(_chol_prog(4, 4))
    assert "for (int k" not in fn.text


def test_blocked_kernel_has_outer_loop():
    fn = emit_function(_chol_prog(8, 4))
    assert "for (int k = 0; k < 2; ++k)" in fn.text


def test_nu_kernel_text_uses_only_kernel_calls():
    prog = map_nu_kernels(tile(_chol_prog(8, 4), 4), 4)
    fn = emit_function(prog)
    body = fn.text.split("{", 1)[1]
    assert "nu_mmacc_4" in body and "nu_chol_4" in body
    assert " -= " not in body and " sqrt(" not in body
    assert '#include "nu_kernels_4.h"' in fn.text


def test_signature_and_params():
    fn = emit_function(_chol_prog(4, 4))
    assert fn.params == (("A", "in"), ("X", "out"))
    assert "void chol_v2_n4_b4(const double* A, double* X)" in fn.text


@pytest.mark.parametrize("nu", [2, 4, 8])
def test_header_has_eight_definitions(nu):
    header = emit_nu_kernel_header(nu)
    defs = re.findall(r"static inline void (nu_\w+)\(", header.text)
    assert len(defs) == 8
    assert defs == [f"nu_{op}_{nu}" for op in
                    ("copy", "transpose", "mmacc", "addsub", "scale",
                     "trsm", "chol", "sylv")]


def test_header_rejects_unsupported_nu():
    with pytest.raises(LagenError):
        emit_nu_kernel_header(3)


def test_harness_format_contract():
    fn = emit_function(_chol_prog(4, 4))
    harness = emit_bench_harness(fn, [4], reps=3)
    assert harness.text.count('printf("RESULT') == 1
    assert "clock_gettime(CLOCK_MONOTONIC" in harness.text
    assert "calloc" in harness.text
    with pytest.raises(LagenError):
        emit_bench_harness(fn, [8], reps=3)


# -- compile-and-run checks (skipped without a toolchain) -----------------------

def _compile_shared(sources, tmp):
    cc = _cc()
    main = tmp / "kernel.c"
    main.write_text(sources[0])
    for name, text in sources[1]:
        (tmp / name).write_text(text)
    out = tmp / "kernel.so"
    cmd = [cc, "-std=c99", "-O2", "-Wall", "-Wextra", "-Werror", "-shared",
           "-fPIC", str(main), "-o", str(out), "-lm"]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert proc.stderr.strip() == "", proc.stderr
    return ctypes.CDLL(str(out))


def _run_kernel(lib, fn, inst, eq):
    buffers = {}
    args = []
    for name, role in fn.params:
        if role == "in":
            m = np.ascontiguousarray(inst.bindings[name])
        else:
            m = np.zeros((fn.n, fn.n))
        buffers[name] = m
        args.append(m.ctypes.data_as(ctypes.POINTER(ctypes.c_double)))
    getattr(lib, fn.name)(*args)
    return {name: buffers[name] for name, role in fn.params if role == "out"}


@needs_cc
@pytest.mark.parametrize("source,name", [
    (CHOLESKY, "chol"), (SYLVESTER, "sylv"), (LYAPUNOV, "lyap")])
def test_compiled_kernel_matches_interpreter(source, name, tmp_path):
    eq = parse_equation(source, name=name)
    alg = enumerate_algorithms(eq)[0]
    n, b = 8, 4
    prog = prune_structure(lower_algorithm(alg, n, b))
    fn = emit_function(prog, unroll_leaf=True)
    lib = _compile_shared((fn.text, []), tmp_path)
    inst = random_instance(eq, n, seed=21)
    got = _run_kernel(lib, fn, inst, eq)
    want, _ = interpret_algorithm(alg, inst, b)
    (x,) = eq.unknowns
    assert np.max(np.abs(got[x] - want[x])) <= 1e-12 * max(
        1.0, np.max(np.abs(want[x])))


@needs_cc
def test_compiled_nu_kernel_matches_interpreter(tmp_path):
    eq = parse_equation(SYLVESTER, name="sylv")
    alg = enumerate_algorithms(eq)[0]
    n, b, nu = 8, 4, 4
    prog = map_nu_kernels(tile(prune_structure(
        lower_algorithm(alg, n, b)), b), nu)
    fn = emit_function(prog)
    header = emit_nu_kernel_header(nu)
    lib = _compile_shared((fn.text, [(f"nu_kernels_{nu}.h", header.text)]),
                          tmp_path)
    inst = random_instance(eq, n, seed=22)
    got = _run_kernel(lib, fn, inst, eq)
    want, _ = interpret_algorithm(alg, inst, b)
    assert np.max(np.abs(got["X"] - want["X"])) <= 1e-12 * max(
        1.0, np.max(np.abs(want["X"])))


@needs_cc
def test_mmacc_identity_tiles(tmp_path):
    header = emit_nu_kernel_header(4)
    src = header.text + """
void run(double* c, const double* a, const double* b) {
    nu_mmacc_4(c, 4, a, 4, b, 4, 1);
}
"""
    path = tmp_path / "mm.c"
    path.write_text(src)
    out = tmp_path / "mm.so"
    subprocess.run([_cc(), "-std=c99", "-O2", "-shared", "-fPIC", str(path),
                    "-o", str(out), "-lm"], check=True)
    lib = ctypes.CDLL(str(out))
    eye = np.eye(4)
    c = eye.copy()
    a = eye.copy()
    b = eye.copy()
    p = lambda m: m.ctypes.data_as(ctypes.POINTER(ctypes.c_double))
    lib.run(p(c), p(a), p(b))
    # accumulating I @ I onto I doubles the diagonal and nothing else
    assert np.array_equal(c, 2 * np.eye(4))


@needs_cc
def test_harness_runs_and_prints_result(tmp_path):
    fn = emit_function(_chol_prog(8, 4), unroll_leaf=True)
    harness = emit_bench_harness(fn, [8], reps=3)
    src = tmp_path / "bench.c"
    src.write_text(harness.text)
    exe = tmp_path / "bench"
    proc = subprocess.run([_cc(), "-std=c99", "-O2", "-Wall", "-Wextra",
                           "-Werror", str(src), "-o", str(exe), "-lm"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    run = subprocess.run([str(exe)], capture_output=True, text=True)
    assert run.returncode == 0, run.stderr
    lines = [l for l in run.stdout.splitlines() if l.startswith("RESULT")]
    assert len(lines) == 1
    tag, kname, n, ns, flops = lines[0].split()
    assert int(n) == 8 and int(ns) >= 0 and int(flops) == fn.flops


@needs_cc
def test_median_definition(tmp_path):
    fn = emit_function(_chol_prog(4, 4))
    harness = emit_bench_harness(fn, [4], reps=3)
    src = tmp_path / "median.c"
    src.write_text(harness.text)
    exe = tmp_path / "median"
    subprocess.run([_cc(), "-std=c99", "-O2", "-DMEDIAN_SELFTEST", str(src),
                    "-o", str(exe), "-lm"], check=True)
    run = subprocess.run([str(exe)], capture_output=True, text=True)
    assert run.stdout.strip() == "MEDIAN 7"
