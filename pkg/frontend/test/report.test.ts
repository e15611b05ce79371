import { describe, expect, it } from "vitest";

import {
  flopsPerCycle,
  isVerified,
  parseReport,
  rankVariants,
  renderTable,
  selectedVariant,
} from "../src/report.js";

const row = (over: Partial<Record<string, unknown>> = {}) => ({
  id: "a0_b4_t4_scalar",
  algorithm: 0,
  invariant: "{T1}",
  b: 4,
  tiles: 4,
  mode: "scalar",
  flops: 11440,
  residuals: { "16": 1.2e-15 },
  median_ns: null,
  selected: false,
  ...over,
});

const report = (variants: unknown[]) => ({
  equation: "chol",
  n: 16,
  variants,
});

describe("report schema", () => {
  it("accepts a well-formed report", () => {
    const parsed = parseReport(report([row()]));
    expect(parsed.equation).toBe("chol");
    expect(parsed.variants).toHaveLength(1);
  });

  it("rejects missing fields", () => {
    const bad = report([{ id: "x" }]);
    expect(() => parseReport(bad)).toThrow();
  });

  it("rejects non-integer timing", () => {
    expect(() => parseReport(report([row({ median_ns: 12.5 })]))).toThrow();
  });

  it("allows null residual entries for non-divisible sizes", () => {
    const parsed = parseReport(
      report([row({ residuals: { "12": null, "16": 3e-12 } })]),
    );
    expect(isVerified(parsed.variants[0]!)).toBe(true);
  });
});

describe("verification and ranking", () => {
  it("isVerified respects the tolerance", () => {
    expect(isVerified(parseReport(report([row()])).variants[0]!)).toBe(true);
    const failing = parseReport(
      report([row({ residuals: { "16": 1e-3 } })]),
    ).variants[0]!;
    expect(isVerified(failing)).toBe(false);
  });

  it("ranks by median, then flops, then id", () => {
    const parsed = parseReport(
      report([
        row({ id: "c", median_ns: 100, flops: 900 }),
        row({ id: "b", median_ns: 90, flops: 500 }),
        row({ id: "a", median_ns: 90, flops: 400 }),
        row({ id: "d", median_ns: null }),
      ]),
    );
    expect(rankVariants(parsed).map((v) => v.id)).toEqual(["a", "b", "c"]);
  });

  it("finds the selected variant", () => {
    const parsed = parseReport(
      report([row(), row({ id: "winner", selected: true })]),
    );
    expect(selectedVariant(parsed)?.id).toBe("winner");
  });
});

describe("flops per cycle", () => {
  it("divides flops by ns * GHz", () => {
    // 65536 flops in 16384 ns at 1 GHz is 4 f/c
    expect(flopsPerCycle(65536, 16384, 1)).toBeCloseTo(4);
    expect(flopsPerCycle(65536, 16384, 2)).toBeCloseTo(2);
  });

  it("rejects nonpositive inputs", () => {
    expect(() => flopsPerCycle(10, 0, 1)).toThrow(RangeError);
  });
});

describe("table rendering", () => {
  it("includes every variant and marks the selection", () => {
    const parsed = parseReport(
      report([
        row({ id: "slow", median_ns: 200 }),
        row({ id: "fast", median_ns: 100, selected: true }),
      ]),
    );
    const table = renderTable(parsed, 1.0);
    expect(table).toContain("fast");
    expect(table).toContain("<<<");
    expect(table.indexOf("fast")).toBeLessThan(table.indexOf("slow"));
  });
});
