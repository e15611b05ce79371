import { describe, expect, it } from "vitest";

import {
  medianNs,
  parseResultLine,
  parseResultLines,
  parseVerifyLine,
} from "../src/lines.js";

describe("RESULT lines", () => {
  it("parses the harness format", () => {
    const r = parseResultLine("RESULT chol_v2_n8_b4 8 1200 204");
    expect(r).toEqual({
      kernel: "chol_v2_n8_b4",
      n: 8,
      medianNs: 1200,
      flops: 204,
    });
  });

  it("ignores unrelated lines", () => {
    expect(parseResultLine("warming up")).toBeNull();
    expect(parseResultLine("RESULT broken")).toBeNull();
    const all = parseResultLines(
      "noise\nRESULT k 8 10 20\nmore noise\nRESULT k 8 11 20\n",
    );
    expect(all).toHaveLength(2);
  });
});

describe("VERIFY lines", () => {
  it("parses pass and fail", () => {
    const ok = parseVerifyLine(
      "VERIFY a0_b4_t4_scalar n=8 residual=3.1e-15 flops=204 PASS",
    );
    expect(ok?.passed).toBe(true);
    expect(ok?.residual).toBeCloseTo(3.1e-15);
    const bad = parseVerifyLine(
      "VERIFY a0_b4_t4_scalar n=8 residual=0.5 flops=204 FAIL",
    );
    expect(bad?.passed).toBe(false);
  });
});

describe("median definition", () => {
  it("takes the middle of odd sample counts", () => {
    expect(medianNs([5, 7, 100])).toBe(7);
    expect(medianNs([100, 5, 7])).toBe(7);
  });

  it("takes the truncated mean of the middle pair for even counts", () => {
    expect(medianNs([4, 10])).toBe(7);
    expect(medianNs([1, 2, 3, 10])).toBe(2); // (2 + 3) / 2 truncated
  });

  it("rejects empty input", () => {
    expect(() => medianNs([])).toThrow(RangeError);
  });
});
