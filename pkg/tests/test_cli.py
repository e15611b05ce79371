import json
import os
import shutil
import stat
import time
from pathlib import Path

import pytest

from lagen.cli import (
    REPORT_SCHEMA,
    UsageError,
    benchmark_variant,
    default_blocks,
    enumerate_variants,
    main,
    run_pipeline,
)
from lagen.codegen import emit_bench_harness, emit_function
from lagen.errors import ToolchainError
from lagen.lang import parse_equation

from cases import CHOLESKY, LYAPUNOV, SYLVESTER


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# -- enumerate_variants --------------------------------------------------------

def test_cholesky_variant_count():
    eq = parse_equation(CHOLESKY, name="chol")
    variants = enumerate_variants(eq, 16, blocks=[4, 8], mode="scalar")
    assert len(variants) == 6  # 3 algorithms x 2 block sizes


def test_sylvester_variant_count_at_24():
    eq = parse_equation(SYLVESTER, name="sylv")
    variants = enumerate_variants(eq, 24)
    assert len(variants) >= 4


def test_empty_search_space():
    eq = parse_equation(CHOLESKY, name="chol")
    with pytest.raises(UsageError):
        enumerate_variants(eq, 7, blocks=[4, 8])


def test_default_blocks_rules():
    assert default_blocks(16) == [4, 8]
    assert default_blocks(32) == [4, 8, 16]
    assert default_blocks(4) == [4]
    assert default_blocks(7) == []


def test_nu_variants_require_divisibility():
    eq = parse_equation(CHOLESKY, name="chol")
    variants = enumerate_variants(eq, 16, blocks=[4], mode="both", nu=4)
    modes = {v.mode for v in variants}
    assert modes == {"scalar", "nu"}
    only_scalar = enumerate_variants(eq, 16, blocks=[4], tiles=2,
                                     mode="both", nu=4)
    assert {v.mode for v in only_scalar} == {"scalar"}


# -- run_pipeline ----------------------------------------------------------------

def test_pipeline_no_toolchain(tmp_path):
    eq = parse_equation(CHOLESKY, name="chol")
    report, verified, failures = run_pipeline(eq, [16], out_dir=tmp_path)
    assert verified and failures == 0
    assert len(report["variants"]) == 6
    assert all(r["median_ns"] is None for r in report["variants"])
    assert not any(r["selected"] for r in report["variants"])
    for r in report["variants"]:
        assert all(v <= 1e-10 for v in r["residuals"].values())
    files = sorted(p.name for p in tmp_path.iterdir())
    assert "chol_a0_b4_t4_scalar_16.c" in files
    assert len([f for f in files if f.endswith(".c")]) == 6


def test_report_schema(tmp_path):
    jsonschema = pytest.importorskip("jsonschema")
    eq = parse_equation(LYAPUNOV, name="lyap")
    report, _, _ = run_pipeline(eq, [8, 16])
    jsonschema.validate(report, REPORT_SCHEMA)
    json.dumps(report)  # serializable


# -- CLI surface -----------------------------------------------------------------

def test_cli_synth_pme_only(tmp_path, capsys):
    path = _write(tmp_path, "chol.la", CHOLESKY)
    assert main(["synth", "--input", path, "--pme-only"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("T1: CHOL(A_TL) -> X_TL")
    assert len(out.strip().splitlines()) == 4


def test_cli_synth_list_invariants(tmp_path, capsys):
    path = _write(tmp_path, "chol.la", CHOLESKY)
    assert main(["synth", "--input", path, "--list-invariants"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "INV0: {T1} dir=TL->BR"
    assert len(lines) == 3


def test_cli_verify_pass(tmp_path, capsys):
    path = _write(tmp_path, "sylv.la", SYLVESTER)
    code = main(["verify", "--input", path, "--n", "4,8", "--seed", "1",
                 "--blocks", "4"])
    out = capsys.readouterr().out
    assert code == 0
    assert "PASS" in out and "FAIL" not in out


def test_cli_malformed_input_exits_2(tmp_path, capsys):
    path = _write(tmp_path, "bad.la", "Equation: X^T * = A\n")
    code = main(["verify", "--input", path, "--n", "4"])
    assert code == 2
    assert capsys.readouterr().err.strip()


def test_cli_missing_file_exits_2(tmp_path, capsys):
    code = main(["tune", "--input", str(tmp_path / "nope.la"), "--n", "8"])
    assert code == 2


def test_cli_tune_no_cc(tmp_path, capsys):
    path = _write(tmp_path, "chol.la", CHOLESKY)
    report_path = tmp_path / "report.json"
    code = main(["tune", "--input", path, "--n", "16", "--seed", "42",
                 "--report", str(report_path)])
    assert code == 0
    report = json.loads(report_path.read_text())
    assert report["equation"] == "chol"
    assert len(report["variants"]) == 6


# -- benchmarking ----------------------------------------------------------------

def _fake_toolchain(tmp_path, log_path, sleep_s=0.05):
    """A fake cc: emits an executable that logs an interval and prints a
    RESULT line whose median depends on the kernel name."""
    cc = tmp_path / "fakecc"
    cc.write_text(f"""#!/bin/sh
# last argument before -lm is dropped; find -o target
out=""
prev=""
for a in "$@"; do
  if [ "$prev" = "-o" ]; then out="$a"; fi
  prev="$a"
done
name=$(basename "$1" .c)
cat > "$out" <<EOF
#!/bin/sh
python3 - <<'PYEOF'
import time
start = time.monotonic_ns()
time.sleep({sleep_s})
end = time.monotonic_ns()
with open({str(log_path)!r}, "a") as f:
    f.write(f"{{start}} {{end}}\\n")
print("RESULT $name 8 1200 42")
PYEOF
EOF
chmod +x "$out"
""")
    cc.chmod(cc.stat().st_mode | stat.S_IEXEC)
    return str(cc)


@pytest.mark.skipif(shutil.which("sh") is None, reason="needs a shell")
def test_benchmark_variant_parses_result(tmp_path):
    eq = parse_equation(CHOLESKY, name="chol")
    from lagen.cli import build_program, enumerate_variants

    cfg = enumerate_variants(eq, 8, blocks=[4])[0]
    fn = emit_function(build_program(cfg, 8))
    harness = emit_bench_harness(fn, [8], reps=3)
    log = tmp_path / "log.txt"
    cc = _fake_toolchain(tmp_path, log)
    assert benchmark_variant(harness, cc, 3) == 1200


@pytest.mark.skipif(shutil.which("sh") is None, reason="needs a shell")
def test_benchmark_processes_are_serialized(tmp_path):
    eq = parse_equation(CHOLESKY, name="chol")
    log = tmp_path / "log.txt"
    cc = _fake_toolchain(tmp_path, log)
    report, verified, failures = run_pipeline(eq, [8], blocks=[4], cc=cc)
    assert failures == 0
    intervals = []
    for line in log.read_text().splitlines():
        a, b = map(int, line.split())
        intervals.append((a, b))
    assert len(intervals) == len(report["variants"])
    intervals.sort()
    for (a1, b1), (a2, b2) in zip(intervals, intervals[1:]):
        assert b1 <= a2, "benchmark processes overlapped"


def test_selection_tie_break_by_flops():
    rows = [
        {"id": "a1", "median_ns": 100, "flops": 500, "selected": False},
        {"id": "a0", "median_ns": 100, "flops": 400, "selected": False},
        {"id": "a2", "median_ns": 90, "flops": 900, "selected": False},
    ]
    from lagen.cli import _select

    _select(rows)
    assert [r["selected"] for r in rows] == [False, False, True]
    rows2 = [
        {"id": "a1", "median_ns": 100, "flops": 500, "selected": False},
        {"id": "a0", "median_ns": 100, "flops": 400, "selected": False},
    ]
    _select(rows2)
    assert [r["selected"] for r in rows2] == [False, True]


@pytest.mark.skipif(shutil.which("cc") is None and shutil.which("gcc") is None,
                    reason="no C toolchain")
def test_residual_guard_trips_on_wrong_kernel(tmp_path):
    # a kernel that computes nothing fails the harness guard before timing
    cc = shutil.which("cc") or shutil.which("gcc")
    eq = parse_equation(CHOLESKY, name="chol")
    from lagen.cli import build_program
    from lagen.codegen import EmittedSource

    cfg = enumerate_variants(eq, 4, blocks=[4])[0]
    good = emit_function(build_program(cfg, 4))
    broken_text = ("void " + good.name +
                   "(const double* A, double* X) { (void)A; (void)X; }\n")
    broken = EmittedSource(good.name, "kernel", broken_text, good.params,
                           good.n, good.flops, good.nu, good.equation)
    harness = emit_bench_harness(broken, [4], reps=2)
    with pytest.raises(ToolchainError, match="GUARD"):
        benchmark_variant(harness, f"{cc} -O2 -std=c99", 2)


@pytest.mark.skipif(shutil.which("cc") is None and shutil.which("gcc") is None,
                    reason="no C toolchain")
def test_tune_with_real_toolchain_selects_one(tmp_path):
    cc = shutil.which("cc") or shutil.which("gcc")
    eq = parse_equation(SYLVESTER, name="sylv")
    report, verified, failures = run_pipeline(
        eq, [8], blocks=[4], cc=f"{cc} -O2 -std=c99", reps=3)
    assert verified and failures == 0
    assert sum(r["selected"] for r in report["variants"]) == 1
    selected = next(r for r in report["variants"] if r["selected"])
    assert selected["median_ns"] >= 0
