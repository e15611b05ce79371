/**
 * Tuner report handling.
 *
 * The generator's `tune` command writes a JSON report with one row per
 * (algorithm x block size x mode) variant: residuals per verification size,
 * the exact operation count, the benchmark median in nanoseconds when a
 * toolchain ran, and the selection mark.  This module validates that schema,
 * ranks variants, and derives flops-per-cycle figures.
 */

import { readFileSync } from "node:fs";
import { z } from "zod";

export const VariantRow = z.object({
  id: z.string(),
  algorithm: z.number().int(),
  invariant: z.string(),
  b: z.number().int().positive(),
  tiles: z.number().int().positive(),
  mode: z.string(),
  flops: z.number().int().nonnegative(),
  residuals: z.record(z.string(), z.number().nullable()),
  median_ns: z.number().int().nonnegative().nullable(),
  selected: z.boolean(),
});

export const TuneReport = z.object({
  equation: z.string(),
  n: z.number().int().positive(),
  variants: z.array(VariantRow),
});

export type VariantRow = z.infer<typeof VariantRow>;
export type TuneReport = z.infer<typeof TuneReport>;

export function parseReport(json: unknown): TuneReport {
  return TuneReport.parse(json);
}

export function loadReport(path: string): TuneReport {
  return parseReport(JSON.parse(readFileSync(path, "utf8")));
}

/** A variant counts as verified when every recorded residual passed. */
export function isVerified(row: VariantRow, tol = 1e-10): boolean {
  const values = Object.values(row.residuals).filter(
    (r): r is number => r !== null,
  );
  return values.length > 0 && values.every((r) => r <= tol);
}

/**
 * Timed variants ranked fastest-first with the generator's tie-break:
 * median time, then operation count, then id.
 */
export function rankVariants(report: TuneReport): VariantRow[] {
  return report.variants
    .filter((v) => v.median_ns !== null)
    .sort(
      (a, b) =>
        a.median_ns! - b.median_ns! ||
        a.flops - b.flops ||
        a.id.localeCompare(b.id),
    );
}

export function selectedVariant(report: TuneReport): VariantRow | undefined {
  return report.variants.find((v) => v.selected);
}

/**
 * Performance in flops per cycle for a measured variant.
 * cycles = ns * GHz, so f/c = flops / (median_ns * ghz).
 */
export function flopsPerCycle(flops: number, medianNs: number, ghz: number): number {
  if (medianNs <= 0 || ghz <= 0) {
    throw new RangeError("median_ns and ghz must be positive");
  }
  return flops / (medianNs * ghz);
}

/** Fixed-width text table of a report, fastest first when timed. */
export function renderTable(report: TuneReport, ghz?: number): string {
  const rows = report.variants.length
    ? (rankVariants(report).length
        ? rankVariants(report)
        : report.variants)
    : [];
  const header = ["variant", "b", "mode", "flops", "median_ns"];
  if (ghz) header.push("f/c");
  header.push("verified", "selected");
  const table: string[][] = [header];
  for (const row of rows) {
    const cells = [
      row.id,
      String(row.b),
      row.mode,
      String(row.flops),
      row.median_ns === null ? "-" : String(row.median_ns),
    ];
    if (ghz) {
      cells.push(
        row.median_ns === null
          ? "-"
          : flopsPerCycle(row.flops, row.median_ns, ghz).toFixed(3),
      );
    }
    cells.push(isVerified(row) ? "yes" : "NO", row.selected ? "<<<" : "");
    table.push(cells);
  }
  const widths = header.map((_, c) =>
    Math.max(...table.map((r) => r[c]!.length)),
  );
  return table
    .map((r) => r.map((cell, c) => cell.padEnd(widths[c]!)).join("  "))
    .join("\n");
}
