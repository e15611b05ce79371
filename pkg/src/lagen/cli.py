"""End-to-end driver: variant enumeration, verification, code emission,
empirical selection through an external C toolchain, and reporting.

Verification is mandatory for every variant; only variants whose residuals
pass at every requested size are candidates for benchmarking and selection.
Benchmark processes run strictly one at a time.
"""

import argparse
import json
import shlex
import subprocess
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .codegen import emit_bench_harness, emit_function, emit_nu_kernel_header
from .errors import LagenError, ToolchainError, VerificationError
from .invariants import enumerate_invariants
from .lang import parse_equation
from .lowering import lower_algorithm, map_nu_kernels, prune_structure, tile
from .pme import derive_pmes, format_pme
from .verify import interpret_algorithm, random_instance, residual
from .worksheet import enumerate_algorithms, flop_count, format_worksheet

DEFAULT_BLOCKS = (4, 8, 16)
DEFAULT_NU = 4
DEFAULT_TOL = 1e-10
DEFAULT_REPS = 3
DEFAULT_SEED = 42

REPORT_SCHEMA = {
    "type": "object",
    "required": ["equation", "n", "variants"],
    "properties": {
        "equation": {"type": "string"},
        "n": {"type": "integer"},
        "variants": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "algorithm", "invariant", "b", "tiles",
                             "mode", "flops", "residuals", "median_ns",
                             "selected"],
                "properties": {
                    "id": {"type": "string"},
                    "algorithm": {"type": "integer"},
                    "invariant": {"type": "string"},
                    "b": {"type": "integer"},
                    "tiles": {"type": "integer"},
                    "mode": {"type": "string"},
                    "flops": {"type": "integer"},
                    "residuals": {"type": "object"},
                    "median_ns": {"type": ["integer", "null"]},
                    "selected": {"type": "boolean"},
                },
            },
        },
    },
}


class UsageError(LagenError):
    """Bad flags or an empty search space; exits with code 2."""


@dataclass(frozen=True)
class VariantConfig:
    algorithm: object
    algorithm_index: int
    b: int
    tiles: int
    mode: str                 # "scalar" | "nu"
    nu: int = None

    def __post_init__(self):
        if self.b % self.tiles:
            raise UsageError(f"tiles {self.tiles} do not divide b {self.b}")
        if self.mode == "nu" and self.tiles % self.nu:
            raise UsageError(f"nu {self.nu} does not divide tiles {self.tiles}")

    @property
    def id(self):
        suffix = f"nu{self.nu}" if self.mode == "nu" else "scalar"
        return f"a{self.algorithm_index}_b{self.b}_t{self.tiles}_{suffix}"


def default_blocks(n):
    blocks = [b for b in DEFAULT_BLOCKS if n % b == 0 and b < n]
    if not blocks and n in DEFAULT_BLOCKS:
        blocks = [n]
    return blocks


def enumerate_variants(eq, n, blocks=None, tiles=None, mode="scalar",
                       nu=DEFAULT_NU, algorithms=None):
    """Cross product of algorithms x admissible block sizes x modes."""
    if n < 2:
        raise UsageError("n must be at least 2")
    if blocks is None:
        blocks = default_blocks(n)
    blocks = [b for b in blocks if b <= n and n % b == 0]
    if not blocks:
        raise UsageError(f"no admissible block size divides n={n}")
    if algorithms is None:
        algorithms = enumerate_algorithms(eq)
    out = []
    for idx, alg in enumerate(algorithms):
        for b in blocks:
            t = tiles or b
            if b % t:
                continue
            if mode in ("scalar", "both"):
                out.append(VariantConfig(alg, idx, b, t, "scalar"))
            if mode in ("nu", "both") and t % nu == 0 and n % nu == 0:
                out.append(VariantConfig(alg, idx, b, t, "nu", nu))
    if not out:
        raise UsageError("variant search space is empty")
    return out


def build_program(cfg, n):
    prog = prune_structure(lower_algorithm(cfg.algorithm, n, cfg.b))
    prog = tile(prog, cfg.tiles)
    if cfg.mode == "nu":
        prog = map_nu_kernels(prog, cfg.nu)
    return prog


def verify_variant(cfg, sizes, seed, tol):
    """Equation residuals of the interpreted variant at every size."""
    residuals = {}
    for n in sizes:
        if n % cfg.b:
            residuals[str(n)] = None
            continue
        inst = random_instance(cfg.algorithm.equation, n, seed)
        outputs, _ = interpret_algorithm(cfg.algorithm, inst, cfg.b)
        residuals[str(n)] = residual(cfg.algorithm.equation, inst, outputs)
    checked = [r for r in residuals.values() if r is not None]
    passed = bool(checked) and all(r <= tol for r in checked)
    return residuals, passed


def benchmark_variant(harness, cc, reps, workdir=None, extra_files=()):
    """Compile and run one benchmark harness; returns the median in ns.

    Exactly one benchmark process runs at a time: the subprocess call blocks
    until the harness exits.
    """
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        tmp = Path(tmp)
        src = tmp / f"{harness.name}.c"
        src.write_text(harness.text)
        for name, text in extra_files:
            (tmp / name).write_text(text)
        exe = tmp / harness.name
        cmd = shlex.split(cc) + [str(src), "-o", str(exe), "-lm"]
        proc = subprocess.run(cmd, capture_output=True, text=True)
        if proc.returncode != 0:
            raise ToolchainError(f"compilation failed: {proc.stderr.strip()}")
        run = subprocess.run([str(exe)], capture_output=True, text=True,
                             cwd=tmp)
        if run.returncode != 0:
            raise ToolchainError(
                f"benchmark failed: {run.stderr.strip() or run.stdout.strip()}")
        for line in run.stdout.splitlines():
            parts = line.split()
            if len(parts) == 5 and parts[0] == "RESULT":
                return int(parts[3])
        raise ToolchainError(f"no RESULT line in output: {run.stdout!r}")


def _select(rows):
    """Mark the fastest verified row; ties break on flops, then id."""
    timed = [r for r in rows if r["median_ns"] is not None]
    if not timed:
        return
    best = min(timed, key=lambda r: (r["median_ns"], r["flops"], r["id"]))
    best["selected"] = True


def run_pipeline(eq, sizes, seed=DEFAULT_SEED, tol=DEFAULT_TOL, blocks=None,
                 tiles=None, mode="scalar", nu=DEFAULT_NU, cc=None,
                 reps=DEFAULT_REPS, out_dir=None, unroll_leaf=False,
                 log=print):
    """The full generate-verify-benchmark-select pipeline for one equation.

    Returns (report dict, all_verified flag, benchmark_failures count).
    """
    target_n = max(sizes)
    variants = enumerate_variants(eq, target_n, blocks, tiles, mode, nu)
    rows = []
    emitted = {}
    header_cache = {}
    for cfg in variants:
        residuals, passed = verify_variant(cfg, sizes, seed, tol)
        row = {
            "id": cfg.id,
            "algorithm": cfg.algorithm_index,
            "invariant": cfg.algorithm.invariant.label(),
            "b": cfg.b,
            "tiles": cfg.tiles,
            "mode": "nu_tiled" if cfg.mode == "nu" else "scalar",
            "flops": flop_count(cfg.algorithm, target_n, cfg.b),
            "residuals": residuals,
            "median_ns": None,
            "selected": False,
            "verified": passed,
        }
        prog = build_program(cfg, target_n)
        fn = emit_function(prog, unroll_leaf=unroll_leaf)
        emitted[cfg.id] = (cfg, fn)
        if cfg.mode == "nu" and cfg.nu not in header_cache:
            header_cache[cfg.nu] = emit_nu_kernel_header(cfg.nu)
        rows.append(row)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for nu_v, header in header_cache.items():
            (out_dir / f"nu_kernels_{nu_v}.h").write_text(header.text)
        for cfg, fn in emitted.values():
            name = f"{eq.name}_{cfg.id}_{target_n}.c"
            (out_dir / name).write_text(fn.text)

    bench_failures = 0
    if cc is not None:
        for row in rows:
            if not row["verified"]:
                continue
            cfg, fn = emitted[row["id"]]
            harness = emit_bench_harness(fn, [target_n], reps, seed=seed)
            extra = []
            if cfg.mode == "nu":
                header = header_cache[cfg.nu]
                extra.append((f"nu_kernels_{cfg.nu}.h", header.text))
            try:
                row["median_ns"] = benchmark_variant(harness, cc, reps,
                                                     extra_files=extra)
            except ToolchainError as err:
                bench_failures += 1
                log(f"benchmark {row['id']}: {err}", file=sys.stderr)
        _select(rows)

    all_verified = all(r["verified"] for r in rows)
    for row in rows:
        del row["verified"]
    report = {"equation": eq.name, "n": target_n, "variants": rows}
    return report, all_verified, bench_failures


# --------------------------------------------------------------------------- #
# Command line
# --------------------------------------------------------------------------- #

def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err))


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="lagen",
        description="Generate, verify, and tune blocked linear-algebra kernels")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, sizes_default=None):
        p.add_argument("--input", required=True, help="equation file (.la)")
        p.add_argument("--n", type=_int_list, default=sizes_default,
                       help="comma-separated matrix orders")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        p.add_argument("--tol", type=float, default=DEFAULT_TOL)
        p.add_argument("--blocks", type=_int_list, default=None)
        p.add_argument("--tiles", type=int, default=None)
        p.add_argument("--nu", type=int, default=DEFAULT_NU)
        p.add_argument("--mode", choices=("scalar", "nu", "both"),
                       default="scalar")

    synth = sub.add_parser("synth", help="algorithm synthesis only")
    synth.add_argument("--input", required=True)
    synth.add_argument("--pme-only", action="store_true")
    synth.add_argument("--list-invariants", action="store_true")

    gen = sub.add_parser("gen", help="emit kernel sources")
    common(gen, sizes_default=[16])
    gen.add_argument("--out", required=True)
    gen.add_argument("--unroll-leaf", action="store_true")

    verify = sub.add_parser("verify", help="interpret and check residuals")
    common(verify, sizes_default=[4, 8, 16])

    tune = sub.add_parser("tune", help="full pipeline with optional timing")
    common(tune, sizes_default=[16])
    tune.add_argument("--cc", default=None,
                      help='toolchain command, e.g. "cc -O3"')
    tune.add_argument("--reps", type=int, default=DEFAULT_REPS)
    tune.add_argument("--out", default=None)
    tune.add_argument("--report", default=None)
    tune.add_argument("--unroll-leaf", action="store_true")
    return parser


def _load_equation(path):
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as err:
        raise UsageError(f"cannot read {path}: {err}")
    return parse_equation(text, name=p.stem)


def _cmd_synth(args):
    eq = _load_equation(args.input)
    if args.pme_only:
        for pme in derive_pmes(eq):
            print(format_pme(pme), end="")
        return 0
    if args.list_invariants:
        for pme in derive_pmes(eq):
            for i, inv in enumerate(enumerate_invariants(pme)):
                direction = "TL->BR" if inv.traversal == "TL_to_BR" else "BR->TL"
                print(f"INV{i}: {inv.label()} dir={direction}")
        return 0
    for alg in enumerate_algorithms(eq):
        print(format_worksheet(alg))
    return 0


def _cmd_gen(args):
    eq = _load_equation(args.input)
    for n in args.n:
        run_pipeline(eq, [n], seed=args.seed, tol=args.tol,
                     blocks=args.blocks, tiles=args.tiles, mode=args.mode,
                     nu=args.nu, out_dir=args.out,
                     unroll_leaf=args.unroll_leaf)
    print(f"sources written to {args.out}")
    return 0


def _cmd_verify(args):
    eq = _load_equation(args.input)
    variants = enumerate_variants(eq, max(args.n), args.blocks, args.tiles,
                                  args.mode, args.nu)
    failures = 0
    for cfg in variants:
        residuals, _ = verify_variant(cfg, args.n, args.seed, args.tol)
        for n in args.n:
            r = residuals[str(n)]
            if r is None:
                continue
            flops = flop_count(cfg.algorithm, n, cfg.b)
            ok = r <= args.tol
            failures += 0 if ok else 1
            print(f"VERIFY {cfg.id} n={n} residual={r:.3e} flops={flops} "
                  f"{'PASS' if ok else 'FAIL'}")
    return 0 if failures == 0 else 1


def _cmd_tune(args):
    eq = _load_equation(args.input)
    report, all_verified, bench_failures = run_pipeline(
        eq, args.n, seed=args.seed, tol=args.tol, blocks=args.blocks,
        tiles=args.tiles, mode=args.mode, nu=args.nu, cc=args.cc,
        reps=args.reps, out_dir=args.out, unroll_leaf=args.unroll_leaf)
    for row in report["variants"]:
        mark = " selected" if row["selected"] else ""
        ns = row["median_ns"]
        timing = f" median_ns={ns}" if ns is not None else ""
        print(f"TUNE {row['id']} flops={row['flops']}{timing}{mark}")
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2) + "\n")
    if args.cc is not None:
        timed = [r for r in report["variants"] if r["median_ns"] is not None]
        if not timed:
            print("error: toolchain produced no successful benchmark",
                  file=sys.stderr)
            return 3
    return 0 if all_verified else 1


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "gen":
            return _cmd_gen(args)
        if args.command == "verify":
            return _cmd_verify(args)
        return _cmd_tune(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except LagenError as err:
        print(f"error: {err}", file=sys.stderr)
        if isinstance(err, (VerificationError,)):
            return 1
        return 2


if __name__ == "__main__":
    sys.exit(main())
