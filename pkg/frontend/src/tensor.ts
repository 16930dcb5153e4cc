/**
 * Minimal dense tensor on Float64Array. JS numbers are IEEE doubles, so
 * integer-valued tensors (quantized weights, spike maps, accumulators)
 * stay exact as long as magnitudes remain below 2^53.
 */

export class Tensor {
  readonly shape: number[];
  readonly data: Float64Array;

  constructor(shape: number[], data?: Float64Array) {
    this.shape = shape.slice();
    const size = shape.reduce((a, b) => a * b, 1);
    if (data !== undefined) {
      if (data.length !== size) {
        throw new Error(`data length ${data.length} != shape size ${size}`);
      }
      this.data = data;
    } else {
      this.data = new Float64Array(size);
    }
  }

  get size(): number {
    return this.data.length;
  }

  static zeros(shape: number[]): Tensor {
    return new Tensor(shape);
  }

  static fromArray(shape: number[], values: ArrayLike<number>): Tensor {
    return new Tensor(shape, Float64Array.from(values));
  }

  clone(): Tensor {
    return new Tensor(this.shape, this.data.slice());
  }

  fill(value: number): this {
    this.data.fill(value);
    return this;
  }

  maxAbs(): number {
    let m = 0;
    for (let i = 0; i < this.data.length; i++) {
      const a = Math.abs(this.data[i]);
      if (a > m) m = a;
    }
    return m;
  }
}

/** Deterministic PRNG (mulberry32) so training runs are reproducible. */
export function makeRng(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Standard normal via Box-Muller on the given uniform source. */
export function makeGaussian(rng: () => number): () => number {
  let spare: number | null = null;
  return () => {
    if (spare !== null) {
      const v = spare;
      spare = null;
      return v;
    }
    let u = 0;
    let v = 0;
    while (u === 0) u = rng();
    while (v === 0) v = rng();
    const mag = Math.sqrt(-2.0 * Math.log(u));
    spare = mag * Math.sin(2.0 * Math.PI * v);
    return mag * Math.cos(2.0 * Math.PI * v);
  };
}
