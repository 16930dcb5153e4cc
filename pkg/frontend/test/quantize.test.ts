/**
 * Quantization vectors frozen against the inference engine's exact
 * arithmetic; both sides must produce identical integers.
 */

import { describe, expect, it } from "vitest";

import {
  computeScale,
  dequantizeArray,
  fakeQuantize,
  floorLog2,
  quantizeArray,
  quantizeValue,
  roundHalfAwayFromZero,
  scaleForValues,
  scaleOf,
} from "../src/quantize.js";
import { makeRng } from "../src/tensor.js";

describe("computeScale", () => {
  it("matches the engine's frozen vectors", () => {
    expect(computeScale(1.0, 8).scaleExp).toBe(7);
    expect(computeScale(128.0, 8).scaleExp).toBe(0);
    expect(computeScale(3.0, 8).scaleExp).toBe(5);
    expect(computeScale(0.3, 8).scaleExp).toBe(8);
  });

  it("rejects degenerate and invalid ranges", () => {
    expect(() => computeScale(0, 8)).toThrow(/degenerate/);
    expect(() => computeScale(-1, 8)).toThrow();
    expect(() => computeScale(1, 1)).toThrow();
    expect(() => computeScale(1, 17)).toThrow();
  });

  it("is monotone: larger range, smaller exponent", () => {
    const rng = makeRng(7);
    for (let i = 0; i < 200; i++) {
      const a = Math.exp((rng() - 0.5) * 20);
      const factor = 1 + rng() * 100;
      expect(computeScale(a * factor, 8).scaleExp).toBeLessThanOrEqual(
        computeScale(a, 8).scaleExp,
      );
    }
  });

  it("always yields an exact power of two", () => {
    for (const maxAbs of [0.1, 0.5, 1.0, 1.7, 3.0, 100.0, 12345.6]) {
      const s = scaleOf(computeScale(maxAbs, 8));
      expect(2 ** floorLog2(s)).toBe(s);
    }
  });
});

describe("roundHalfAwayFromZero", () => {
  it("rounds ties away from zero", () => {
    expect(roundHalfAwayFromZero(0.5)).toBe(1);
    expect(roundHalfAwayFromZero(-0.5)).toBe(-1);
    expect(roundHalfAwayFromZero(2.5)).toBe(3);
    expect(roundHalfAwayFromZero(-2.5)).toBe(-3);
    expect(roundHalfAwayFromZero(0.49)).toBe(0);
    expect(roundHalfAwayFromZero(-0.49)).toBe(0);
  });

  it("survives the double just below one half", () => {
    // largest double below 0.5: a naive floor(x)+frac tie test misrounds
    // the negative case because the subtraction lands exactly on 0.5
    const x = 0.49999999999999994;
    expect(roundHalfAwayFromZero(x)).toBe(0);
    expect(roundHalfAwayFromZero(-x)).toBe(0);
  });
});

describe("quantize / dequantize", () => {
  it("matches the engine's frozen vectors at S = 128", () => {
    const p = { bits: 8, scaleExp: 7 };
    expect(quantizeValue(0.5, p)).toBe(64);
    expect(quantizeValue(0.0, p)).toBe(0);
    expect(quantizeValue(1.0, p)).toBe(127); // round gives 128, clamped
    expect(quantizeValue(-1.0, p)).toBe(-128);
  });

  it("round-trips unclamped integers exactly", () => {
    const rng = makeRng(3);
    const p = { bits: 8, scaleExp: 5 };
    const q = Float64Array.from({ length: 64 }, () => Math.floor(rng() * 255) - 127);
    const back = quantizeArray(dequantizeArray(q, p), p);
    expect(Array.from(back)).toEqual(Array.from(q));
  });

  it("keeps outputs inside the signed range over random tensors", () => {
    const rng = makeRng(11);
    for (let trial = 0; trial < 300; trial++) {
      const bits = 2 + Math.floor(rng() * 15);
      const magnitude = Math.exp((rng() - 0.5) * 25);
      const values = Float64Array.from({ length: 32 }, () => (rng() - 0.5) * magnitude);
      const p = scaleForValues(values, bits);
      const q = quantizeArray(values, p);
      const lo = -(2 ** (bits - 1));
      const hi = 2 ** (bits - 1) - 1;
      for (const v of q) {
        expect(v).toBeGreaterThanOrEqual(lo);
        expect(v).toBeLessThanOrEqual(hi);
        expect(Number.isInteger(v)).toBe(true);
      }
    }
  });
});

describe("fakeQuantize", () => {
  it("maps zeros to zeros via the substitute scale", () => {
    const out = fakeQuantize(new Float64Array(5), 8);
    expect(Array.from(out)).toEqual([0, 0, 0, 0, 0]);
  });

  it("keeps representable values fixed", () => {
    const out = fakeQuantize(Float64Array.from([0.5, -1.0]), 8);
    expect(Array.from(out)).toEqual([0.5, -1.0]);
  });

  it("quantizes 0.30 at scale 256", () => {
    const out = fakeQuantize(Float64Array.from([0.3]), 8);
    expect(out[0]).toBe(77 / 256);
  });

  it("stays within half a step away from the clamp boundary", () => {
    const rng = makeRng(5);
    for (let trial = 0; trial < 200; trial++) {
      const values = Float64Array.from({ length: 48 }, () => (rng() - 0.5) * 8);
      const p = scaleForValues(values, 8);
      const out = fakeQuantize(values, 8);
      const halfStep = 0.5 * 2 ** -p.scaleExp;
      const clampEdge = (2 ** 7 - 0.5) * 2 ** -p.scaleExp;
      for (let i = 0; i < values.length; i++) {
        if (Math.abs(values[i]) < clampEdge) {
          expect(Math.abs(out[i] - values[i])).toBeLessThanOrEqual(halfStep);
        }
      }
    }
  });
});
