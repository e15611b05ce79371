/**
 * Reference implementations of the fixed tile-kernel set.
 *
 * These mirror the scalar bodies of the generated `nu_kernels_<nu>.h`
 * header one for one, operating on row-major Float64Array views with an
 * explicit leading dimension.  They give JavaScript tooling an independent
 * executable definition of each kernel: anything claiming to be a drop-in
 * (SIMD) replacement for the header must agree with these on every tile.
 */

export interface Tile {
  data: Float64Array;
  ld: number;
  /** row/col offset of the tile's (0,0) element inside `data` */
  off?: number;
}

const at = (t: Tile, i: number, j: number) => (t.off ?? 0) + i * t.ld + j;

export function makeTile(nu: number, values?: ArrayLike<number>): Tile {
  const data = new Float64Array(nu * nu);
  if (values) data.set(values);
  return { data, ld: nu };
}

export function copyTile(nu: number, d: Tile, s: Tile): void {
  for (let i = 0; i < nu; i++)
    for (let j = 0; j < nu; j++) d.data[at(d, i, j)] = s.data[at(s, i, j)]!;
}

export function transposeTile(nu: number, d: Tile, s: Tile): void {
  for (let i = 0; i < nu; i++)
    for (let j = 0; j < nu; j++) d.data[at(d, i, j)] = s.data[at(s, j, i)]!;
}

/** c += sign * a b */
export function mmaccTile(nu: number, c: Tile, a: Tile, b: Tile, sign: 1 | -1): void {
  for (let i = 0; i < nu; i++)
    for (let j = 0; j < nu; j++) {
      let acc = 0;
      for (let k = 0; k < nu; k++)
        acc += a.data[at(a, i, k)]! * b.data[at(b, k, j)]!;
      c.data[at(c, i, j)] += sign > 0 ? acc : -acc;
    }
}

export function addsubTile(nu: number, d: Tile, s: Tile, sign: 1 | -1): void {
  for (let i = 0; i < nu; i++)
    for (let j = 0; j < nu; j++) {
      const v = s.data[at(s, i, j)]!;
      d.data[at(d, i, j)] += sign > 0 ? v : -v;
    }
}

export function scaleTile(nu: number, d: Tile, alpha: number): void {
  for (let i = 0; i < nu; i++)
    for (let j = 0; j < nu; j++) d.data[at(d, i, j)] *= alpha;
}

/** Solve T X = W in place (W becomes X); T logically lower triangular. */
export function trsmTile(nu: number, t: Tile, x: Tile): void {
  for (let j = 0; j < nu; j++)
    for (let i = 0; i < nu; i++) {
      for (let k = 0; k < i; k++)
        x.data[at(x, i, j)] -= t.data[at(t, i, k)]! * x.data[at(x, k, j)]!;
      x.data[at(x, i, j)] /= t.data[at(t, i, i)]!;
    }
}

/** In-place upper factor of an SPD tile; the strict lower is zeroed. */
export function cholTile(nu: number, a: Tile): void {
  for (let i = 0; i < nu; i++) {
    const pivot = a.data[at(a, i, i)]!;
    if (pivot <= 0) throw new RangeError(`non-positive pivot at ${i}`);
    a.data[at(a, i, i)] = Math.sqrt(pivot);
    for (let j = i + 1; j < nu; j++)
      a.data[at(a, i, j)] /= a.data[at(a, i, i)]!;
    for (let r = i + 1; r < nu; r++)
      for (let c = r; c < nu; c++)
        a.data[at(a, r, c)] -= a.data[at(a, i, r)]! * a.data[at(a, i, c)]!;
  }
  for (let i = 1; i < nu; i++)
    for (let j = 0; j < i; j++) a.data[at(a, i, j)] = 0;
}

/** L X + X U = C in place; l lower triangular, u upper triangular. */
export function sylvTile(nu: number, x: Tile, l: Tile, u: Tile): void {
  for (let j = 0; j < nu; j++) {
    for (let i = 0; i < nu; i++)
      for (let k = 0; k < j; k++)
        x.data[at(x, i, j)] -= x.data[at(x, i, k)]! * u.data[at(u, k, j)]!;
    for (let i = 0; i < nu; i++) {
      for (let k = 0; k < i; k++)
        x.data[at(x, i, j)] -= l.data[at(l, i, k)]! * x.data[at(x, k, j)]!;
      x.data[at(x, i, j)] /= l.data[at(l, i, i)]! + u.data[at(u, j, j)]!;
    }
  }
}

export const KERNEL_NAMES = [
  "copy",
  "transpose",
  "mmacc",
  "addsub",
  "scale",
  "trsm",
  "chol",
  "sylv",
] as const;
