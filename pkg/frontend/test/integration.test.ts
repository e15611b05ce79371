/**
 * End-to-end checks against a locally installed generator CLI.  Skipped
 * when `lagen` (or a C compiler, where needed) is not on the PATH.
 */

import { mkdtempSync, readdirSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { spawnSync } from "node:child_process";

import { afterAll, describe, expect, it } from "vitest";

import { isVerified, selectedVariant } from "../src/report.js";
import { checkKernels, lagenAvailable, tune } from "../src/runner.js";

const SYLVESTER = `Equation: L * X + X * U = C
L: Matrix(n,n), lower_triangular, input
U: Matrix(n,n), upper_triangular, input
C: Matrix(n,n), general, input
X: Matrix(n,n), general, output
`;

const haveLagen = lagenAvailable();
const haveCc = (() => {
  const p = spawnSync("sh", ["-c", "command -v cc || command -v gcc"], {
    encoding: "utf8",
  });
  return (p.status ?? 1) === 0 && (p.stdout ?? "").trim().length > 0;
})();

const tmp = mkdtempSync(join(tmpdir(), "latune-it-"));
afterAll(() => rmSync(tmp, { recursive: true, force: true }));

function inputFile(): string {
  const path = join(tmp, "sylvester.la");
  writeFileSync(path, SYLVESTER);
  return path;
}

describe.skipIf(!haveLagen)("generator round trip", () => {
  it("tune without a toolchain yields a verified, untimed report", () => {
    const { report } = tune({ input: inputFile(), n: [8], seed: 7 });
    expect(report.equation).toBe("sylvester");
    expect(report.variants.length).toBeGreaterThanOrEqual(4);
    expect(report.variants.every((v) => isVerified(v))).toBe(true);
    expect(report.variants.every((v) => v.median_ns === null)).toBe(true);
    expect(selectedVariant(report)).toBeUndefined();
  });

  it("emits sources under the documented naming scheme", () => {
    const outDir = join(tmp, "out");
    tune({ input: inputFile(), n: [8], outDir, mode: "both" });
    const files = readdirSync(outDir).sort();
    expect(files).toContain("nu_kernels_4.h");
    expect(
      files.some((f) => /^sylvester_a\d+_b\d+_t\d+_scalar_8\.c$/.test(f)),
    ).toBe(true);
    expect(
      files.some((f) => /^sylvester_a\d+_b\d+_t\d+_nu4_8\.c$/.test(f)),
    ).toBe(true);
  });

  it.skipIf(!haveCc)("emitted kernels are warning-clean", () => {
    const outDir = join(tmp, "out-check");
    tune({ input: inputFile(), n: [8], outDir, mode: "both" });
    const results = checkKernels(outDir, "cc");
    expect(results.length).toBeGreaterThan(0);
    for (const r of results) {
      expect(r.ok, `${r.file}: ${r.stderr}`).toBe(true);
    }
  });

  it.skipIf(!haveCc)("tune with a toolchain selects exactly one variant", () => {
    const { report } = tune({
      input: inputFile(),
      n: [8],
      cc: "cc -O2 -std=c99",
      reps: 3,
    });
    const timed = report.variants.filter((v) => v.median_ns !== null);
    expect(timed.length).toBe(report.variants.length);
    expect(report.variants.filter((v) => v.selected)).toHaveLength(1);
    const chosen = selectedVariant(report)!;
    const best = Math.min(...timed.map((v) => v.median_ns!));
    expect(chosen.median_ns).toBe(best);
  });
});
