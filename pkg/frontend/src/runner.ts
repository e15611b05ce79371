/**
 * Orchestration over the generator's command-line and file interfaces.
 *
 * The frontend never imports the generator: it spawns the `lagen` CLI,
 * reads the JSON report it writes, and (for source inspection) compiles the
 * emitted `<eq>_<variant>_<n>.c` files with a user-supplied toolchain.
 */

import { spawnSync } from "node:child_process";
import { mkdtempSync, readdirSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { loadReport, TuneReport } from "./report.js";

export interface LagenRun {
  status: number;
  stdout: string;
  stderr: string;
}

export function runLagen(args: string[], lagenBin = "lagen"): LagenRun {
  const proc = spawnSync(lagenBin, args, { encoding: "utf8" });
  if (proc.error) {
    throw new Error(`cannot run ${lagenBin}: ${proc.error.message}`);
  }
  return {
    status: proc.status ?? -1,
    stdout: proc.stdout ?? "",
    stderr: proc.stderr ?? "",
  };
}

export function lagenAvailable(lagenBin = "lagen"): boolean {
  const proc = spawnSync(lagenBin, ["--help"], { encoding: "utf8" });
  return !proc.error && (proc.status ?? 1) === 0;
}

export interface TuneOptions {
  input: string;
  n: number[];
  cc?: string;
  reps?: number;
  seed?: number;
  mode?: "scalar" | "nu" | "both";
  outDir?: string;
  lagenBin?: string;
}

/** Run a full tune and return the parsed, schema-validated report. */
export function tune(opts: TuneOptions): {
  report: TuneReport;
  run: LagenRun;
} {
  const tmp = mkdtempSync(join(tmpdir(), "latune-"));
  const reportPath = join(tmp, "report.json");
  const args = [
    "tune",
    "--input",
    opts.input,
    "--n",
    opts.n.join(","),
    "--report",
    reportPath,
  ];
  if (opts.seed !== undefined) args.push("--seed", String(opts.seed));
  if (opts.mode) args.push("--mode", opts.mode);
  if (opts.cc) args.push("--cc", opts.cc);
  if (opts.reps !== undefined) args.push("--reps", String(opts.reps));
  if (opts.outDir) args.push("--out", opts.outDir);
  try {
    const run = runLagen(args, opts.lagenBin);
    if (run.status !== 0) {
      throw new Error(
        `lagen tune exited with ${run.status}: ${run.stderr.trim()}`,
      );
    }
    return { report: loadReport(reportPath), run };
  } finally {
    rmSync(tmp, { recursive: true, force: true });
  }
}

export interface KernelCheck {
  file: string;
  ok: boolean;
  stderr: string;
}

/**
 * Compile every emitted kernel in a directory with warnings as errors.
 * Kernels are translation units without main, so only syntax/semantics are
 * checked; headers in the same directory resolve the nu-kernel include.
 */
export function checkKernels(dir: string, cc: string): KernelCheck[] {
  const files = readdirSync(dir)
    .filter((f) => f.endsWith(".c"))
    .sort();
  const results: KernelCheck[] = [];
  for (const file of files) {
    const proc = spawnSync(
      "sh",
      [
        "-c",
        `${cc} -std=c99 -Wall -Wextra -Werror -fsyntax-only -I"${dir}" "${join(
          dir,
          file,
        )}"`,
      ],
      { encoding: "utf8" },
    );
    results.push({
      file,
      ok: (proc.status ?? 1) === 0 && !(proc.stderr ?? "").trim(),
      stderr: (proc.stderr ?? "").trim(),
    });
  }
  return results;
}
