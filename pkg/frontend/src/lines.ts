/**
 * Parsing of the generator's machine-readable output lines.
 *
 *   RESULT <kernel> <n> <median_ns> <flops>     benchmark harness stdout
 *   VERIFY <variant> n=<n> residual=<r> flops=<f> PASS|FAIL
 */

export interface BenchResult {
  kernel: string;
  n: number;
  medianNs: number;
  flops: number;
}

export interface VerifyLine {
  variant: string;
  n: number;
  residual: number;
  flops: number;
  passed: boolean;
}

export function parseResultLine(line: string): BenchResult | null {
  const parts = line.trim().split(/\s+/);
  if (parts.length !== 5 || parts[0] !== "RESULT") return null;
  const [, kernel, n, medianNs, flops] = parts;
  const out = {
    kernel: kernel!,
    n: Number(n),
    medianNs: Number(medianNs),
    flops: Number(flops),
  };
  if (![out.n, out.medianNs, out.flops].every(Number.isFinite)) return null;
  return out;
}

export function parseResultLines(stdout: string): BenchResult[] {
  return stdout
    .split("\n")
    .map(parseResultLine)
    .filter((r): r is BenchResult => r !== null);
}

const VERIFY_RE =
  /^VERIFY (\S+) n=(\d+) residual=([0-9eE.+-]+) flops=(\d+) (PASS|FAIL)$/;

export function parseVerifyLine(line: string): VerifyLine | null {
  const m = VERIFY_RE.exec(line.trim());
  if (!m) return null;
  return {
    variant: m[1]!,
    n: Number(m[2]),
    residual: Number(m[3]),
    flops: Number(m[4]),
    passed: m[5] === "PASS",
  };
}

/**
 * Median with the harness's exact definition: sort ascending; odd counts
 * take the middle element, even counts the truncated mean of the two
 * middle elements.
 */
export function medianNs(samples: readonly number[]): number {
  if (samples.length === 0) throw new RangeError("median of no samples");
  const v = [...samples].sort((a, b) => a - b);
  const half = Math.floor(v.length / 2);
  if (v.length % 2 === 1) return v[half]!;
  return Math.floor((v[half - 1]! + v[half]!) / 2);
}
