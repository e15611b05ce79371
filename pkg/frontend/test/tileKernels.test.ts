import { describe, expect, it } from "vitest";

import {
  KERNEL_NAMES,
  Tile,
  cholTile,
  copyTile,
  makeTile,
  mmaccTile,
  sylvTile,
  transposeTile,
  trsmTile,
} from "../src/tileKernels.js";

const NU = 4;

function randomTile(seed: number): Tile {
  // deterministic pseudo-random fill, uniform in [-1, 1]
  let s = BigInt(seed);
  const next = () => {
    s = (s + 0x9e3779b97f4a7c15n) & 0xffffffffffffffffn;
    let z = s;
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & 0xffffffffffffffffn;
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & 0xffffffffffffffffn;
    z = z ^ (z >> 31n);
    return Number(z >> 11n) / 2 ** 53;
  };
  const t = makeTile(NU);
  for (let i = 0; i < NU * NU; i++) t.data[i] = 2 * next() - 1;
  return t;
}

function lowerOf(t: Tile): Tile {
  const out = makeTile(NU);
  for (let i = 0; i < NU; i++)
    for (let j = 0; j <= i; j++)
      out.data[i * NU + j] = i === j ? 1.5 + 0.1 * i : t.data[i * NU + j]!;
  return out;
}

function upperOf(t: Tile): Tile {
  const out = makeTile(NU);
  for (let i = 0; i < NU; i++)
    for (let j = i; j < NU; j++)
      out.data[i * NU + j] = i === j ? 1.5 + 0.1 * i : t.data[i * NU + j]!;
  return out;
}

function spdOf(t: Tile): Tile {
  const out = makeTile(NU);
  for (let i = 0; i < NU; i++)
    for (let j = 0; j < NU; j++) {
      let acc = i === j ? NU : 0;
      for (let k = 0; k < NU; k++)
        acc += t.data[k * NU + i]! * t.data[k * NU + j]!;
      out.data[i * NU + j] = acc;
    }
  return out;
}

const maxAbsDiff = (a: Tile, b: Tile) =>
  Math.max(...a.data.map((v, i) => Math.abs(v - b.data[i]!)));

describe("tile kernel set", () => {
  it("has the eight fixed kernels", () => {
    expect(KERNEL_NAMES).toHaveLength(8);
  });

  it("mmacc on identity tiles accumulates the product", () => {
    const eye = makeTile(NU);
    for (let i = 0; i < NU; i++) eye.data[i * NU + i] = 1;
    const c = makeTile(NU, eye.data);
    mmaccTile(NU, c, eye, eye, 1);
    for (let i = 0; i < NU; i++)
      for (let j = 0; j < NU; j++)
        expect(c.data[i * NU + j]).toBe(i === j ? 2 : 0);
  });

  it("transpose then transpose is the identity", () => {
    const src = randomTile(1);
    const once = makeTile(NU);
    const twice = makeTile(NU);
    transposeTile(NU, once, src);
    transposeTile(NU, twice, once);
    expect(maxAbsDiff(twice, src)).toBe(0);
  });

  it("chol factor satisfies X^T X = A and zeroes the strict lower", () => {
    const a = spdOf(randomTile(2));
    const x = makeTile(NU, a.data);
    cholTile(NU, x);
    for (let i = 1; i < NU; i++)
      for (let j = 0; j < i; j++) expect(x.data[i * NU + j]).toBe(0);
    const recon = makeTile(NU);
    const xt = makeTile(NU);
    transposeTile(NU, xt, x);
    mmaccTile(NU, recon, xt, x, 1);
    expect(maxAbsDiff(recon, a)).toBeLessThan(1e-12 * NU * NU);
  });

  it("trsm solves T X = W for lower T", () => {
    const t = lowerOf(randomTile(3));
    const w = randomTile(4);
    const x = makeTile(NU, w.data);
    trsmTile(NU, t, x);
    const recon = makeTile(NU);
    mmaccTile(NU, recon, t, x, 1);
    expect(maxAbsDiff(recon, w)).toBeLessThan(1e-13);
  });

  it("sylv solves L X + X U = C", () => {
    const l = lowerOf(randomTile(5));
    const u = upperOf(randomTile(6));
    const c = randomTile(7);
    const x = makeTile(NU, c.data);
    sylvTile(NU, x, l, u);
    const recon = makeTile(NU);
    mmaccTile(NU, recon, l, x, 1);
    mmaccTile(NU, recon, x, u, 1);
    expect(maxAbsDiff(recon, c)).toBeLessThan(1e-13);
  });

  it("copy respects leading dimensions", () => {
    const big = { data: new Float64Array(8 * 8), ld: 8, off: 2 };
    const src = randomTile(8);
    copyTile(NU, big, src);
    const back = makeTile(NU);
    copyTile(NU, back, big);
    expect(maxAbsDiff(back, src)).toBe(0);
  });
});
