/**
 * Symmetric power-of-two quantization, matching the inference engine's
 * arithmetic bit for bit: scale exponents from an exact floor(log2(...)),
 * rounding half away from zero with an exact tie test, saturation at the
 * signed k-bit range.
 */

export interface QuantParams {
  bits: number;
  scaleExp: number;
}

export function qmin(bits: number): number {
  return -(2 ** (bits - 1));
}

export function qmax(bits: number): number {
  return 2 ** (bits - 1) - 1;
}

export function scaleOf(p: QuantParams): number {
  return 2 ** p.scaleExp;
}

/** Exact floor(log2(x)) for positive finite x: find the exponent by
 * comparison against exact powers of two rather than Math.log2. */
export function floorLog2(x: number): number {
  if (!(x > 0) || !Number.isFinite(x)) {
    throw new Error(`floorLog2 needs a positive finite value, got ${x}`);
  }
  let e = Math.floor(Math.log2(x));
  while (2 ** e > x) e -= 1;
  while (2 ** (e + 1) <= x) e += 1;
  return e;
}

export function isPowerOfTwo(x: number): boolean {
  return x > 0 && 2 ** floorLog2(x) === x;
}

/**
 * Scale selection: n = floor(log2(2^(bits-1) / maxAbs)), computed as
 * (bits-1) - ceil(log2(maxAbs)) so no float division can misround at the
 * power-of-two boundaries.
 */
export function computeScale(maxAbs: number, bits: number): QuantParams {
  if (bits < 2 || bits > 16) {
    throw new Error(`bit width must be in [2, 16], got ${bits}`);
  }
  if (maxAbs === 0) {
    throw new Error("degenerate range: maxAbs is zero");
  }
  if (!(maxAbs > 0) || !Number.isFinite(maxAbs)) {
    throw new Error(`maxAbs must be positive and finite, got ${maxAbs}`);
  }
  const e = floorLog2(maxAbs);
  const n = isPowerOfTwo(maxAbs) ? bits - 1 - e : bits - 1 - e - 1;
  if (Math.abs(n) > 960) {
    throw new Error(`scale exponent ${n} outside the double-exact range`);
  }
  return { bits, scaleExp: n };
}

/** computeScale with the all-zero substitute (scaleExp = bits - 1). */
export function scaleForValues(values: ArrayLike<number>, bits: number): QuantParams {
  let maxAbs = 0;
  for (let i = 0; i < values.length; i++) {
    const a = Math.abs(values[i]);
    if (a > maxAbs) maxAbs = a;
  }
  if (maxAbs === 0) return { bits, scaleExp: bits - 1 };
  return computeScale(maxAbs, bits);
}

/**
 * Round to nearest, ties away from zero. The tie test compares 2x with
 * 2*floor(x) + 1 (both exact doubles at these magnitudes), so boundary
 * values cannot misround.
 */
export function roundHalfAwayFromZero(x: number): number {
  const f = Math.floor(x);
  const twice = 2 * x;
  const halfLine = 2 * f + 1;
  const up = twice > halfLine || (twice === halfLine && x > 0);
  return up ? f + 1 : f;
}

export function quantizeValue(r: number, p: QuantParams): number {
  const q = roundHalfAwayFromZero(r * scaleOf(p));
  return Math.min(qmax(p.bits), Math.max(qmin(p.bits), q));
}

export function quantizeArray(values: Float64Array, p: QuantParams): Float64Array {
  const out = new Float64Array(values.length);
  for (let i = 0; i < values.length; i++) out[i] = quantizeValue(values[i], p);
  return out;
}

export function dequantizeArray(q: Float64Array, p: QuantParams): Float64Array {
  const inv = 2 ** -p.scaleExp;
  const out = new Float64Array(q.length);
  for (let i = 0; i < q.length; i++) out[i] = q[i] * inv;
  return out;
}

/**
 * Forward fake quantization for QAT: quantize-dequantize at the tensor's
 * own scale. The backward contract is the straight-through estimator:
 * gradients flow to the underlying float weights unchanged.
 */
export function fakeQuantize(values: Float64Array, bits: number): Float64Array {
  const p = scaleForValues(values, bits);
  return dequantizeArray(quantizeArray(values, p), p);
}
