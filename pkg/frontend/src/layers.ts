/**
 * Training layers for the single-timestep spiking network.
 *
 * Forward passes use fake-quantized weights when a bit width is armed
 * (quantization-aware training); backward passes send weight gradients
 * straight through the rounding to the underlying float weights, which is
 * the straight-through estimator. The spike nonlinearity is a hard
 * threshold forward and a scaled sigmoid bump backward (surrogate
 * gradient), since the true derivative is zero almost everywhere.
 */

import { Tensor } from "./tensor.js";
import { fakeQuantize } from "./quantize.js";

export interface Param {
  name: string;
  value: Float64Array;
  grad: Float64Array;
}

export function makeParam(name: string, value: Float64Array): Param {
  return { name, value, grad: new Float64Array(value.length) };
}

export function zeroGrads(params: Param[]): void {
  for (const p of params) p.grad.fill(0);
}

function convOutExtent(inExtent: number, kernel: number, stride: number, padding: number): number {
  return Math.floor((inExtent + 2 * padding - kernel) / stride) + 1;
}

export class GroupedConv2d {
  readonly weight: Param;
  readonly bias: Param;
  quantBits: number | null = null;

  private cachedInput: Tensor | null = null;
  private cachedWeights: Float64Array | null = null;

  constructor(
    readonly name: string,
    readonly inChannels: number,
    readonly outChannels: number,
    readonly kernel: number,
    readonly stride: number,
    readonly padding: number,
    readonly groups: number,
    initStd: number,
    gaussian: () => number,
  ) {
    if (inChannels % groups || outChannels % groups) {
      throw new Error(`${name}: groups must divide channel counts`);
    }
    const wsize = outChannels * (inChannels / groups) * kernel * kernel;
    const w = new Float64Array(wsize);
    for (let i = 0; i < wsize; i++) w[i] = gaussian() * initStd;
    this.weight = makeParam(`${name}.weight`, w);
    this.bias = makeParam(`${name}.bias`, new Float64Array(outChannels));
  }

  /** Weights as used by the forward pass (fake-quantized under QAT). */
  effectiveWeights(): Float64Array {
    if (this.quantBits === null) return this.weight.value;
    return fakeQuantize(this.weight.value, this.quantBits);
  }

  forward(x: Tensor): Tensor {
    const [b, c, h, w] = x.shape;
    if (c !== this.inChannels) {
      throw new Error(`${this.name}: expected ${this.inChannels} channels, got ${c}`);
    }
    const k = this.kernel;
    const oh = convOutExtent(h, k, this.stride, this.padding);
    const ow = convOutExtent(w, k, this.stride, this.padding);
    const inPerGroup = this.inChannels / this.groups;
    const outPerGroup = this.outChannels / this.groups;
    const wq = this.effectiveWeights();
    const out = Tensor.zeros([b, this.outChannels, oh, ow]);
    const xd = x.data;
    const od = out.data;
    for (let n = 0; n < b; n++) {
      for (let o = 0; o < this.outChannels; o++) {
        const g = Math.floor(o / outPerGroup);
        const wBase = o * inPerGroup * k * k;
        for (let y = 0; y < oh; y++) {
          for (let z = 0; z < ow; z++) {
            let acc = this.bias.value[o];
            for (let ic = 0; ic < inPerGroup; ic++) {
              const cAbs = g * inPerGroup + ic;
              const xBase = ((n * c + cAbs) * h) * w;
              const wRow = wBase + ic * k * k;
              for (let ky = 0; ky < k; ky++) {
                const iy = y * this.stride + ky - this.padding;
                if (iy < 0 || iy >= h) continue;
                for (let kx = 0; kx < k; kx++) {
                  const ix = z * this.stride + kx - this.padding;
                  if (ix < 0 || ix >= w) continue;
                  acc += xd[xBase + iy * w + ix] * wq[wRow + ky * k + kx];
                }
              }
            }
            od[((n * this.outChannels + o) * oh + y) * ow + z] = acc;
          }
        }
      }
    }
    this.cachedInput = x;
    this.cachedWeights = wq;
    return out;
  }

  backward(gradOut: Tensor): Tensor {
    const x = this.cachedInput;
    const wq = this.cachedWeights;
    if (x === null || wq === null) throw new Error(`${this.name}: backward before forward`);
    const [b, c, h, w] = x.shape;
    const [, , oh, ow] = gradOut.shape;
    const k = this.kernel;
    const inPerGroup = this.inChannels / this.groups;
    const outPerGroup = this.outChannels / this.groups;
    const gradIn = Tensor.zeros(x.shape);
    const xd = x.data;
    const gd = gradOut.data;
    const gi = gradIn.data;
    const dw = this.weight.grad; // STE: gradient lands on the float weights
    const db = this.bias.grad;
    for (let n = 0; n < b; n++) {
      for (let o = 0; o < this.outChannels; o++) {
        const g = Math.floor(o / outPerGroup);
        const wBase = o * inPerGroup * k * k;
        for (let y = 0; y < oh; y++) {
          for (let z = 0; z < ow; z++) {
            const gval = gd[((n * this.outChannels + o) * oh + y) * ow + z];
            if (gval === 0) continue;
            db[o] += gval;
            for (let ic = 0; ic < inPerGroup; ic++) {
              const cAbs = g * inPerGroup + ic;
              const xBase = ((n * c + cAbs) * h) * w;
              const wRow = wBase + ic * k * k;
              for (let ky = 0; ky < k; ky++) {
                const iy = y * this.stride + ky - this.padding;
                if (iy < 0 || iy >= h) continue;
                for (let kx = 0; kx < k; kx++) {
                  const ix = z * this.stride + kx - this.padding;
                  if (ix < 0 || ix >= w) continue;
                  dw[wRow + ky * k + kx] += xd[xBase + iy * w + ix] * gval;
                  gi[xBase + iy * w + ix] += wq[wRow + ky * k + kx] * gval;
                }
              }
            }
          }
        }
      }
    }
    return gradIn;
  }

  params(): Param[] {
    return [this.weight, this.bias];
  }
}

export class BatchNorm2d {
  readonly gamma: Param;
  readonly beta: Param;
  readonly runningMean: Float64Array;
  readonly runningVar: Float64Array;
  readonly eps = 1e-5;
  momentum = 0.1;
  /** Set once the statistics are folded into the preceding conv; the
   * layer then passes values through untouched in both modes. */
  bypass = false;

  private cached: {
    xhat: Float64Array;
    invStd: Float64Array;
    centered: Float64Array;
    shape: number[];
  } | null = null;

  constructor(readonly name: string, readonly channels: number) {
    this.gamma = makeParam(`${name}.gamma`, new Float64Array(channels).fill(1));
    this.beta = makeParam(`${name}.beta`, new Float64Array(channels));
    this.runningMean = new Float64Array(channels);
    this.runningVar = new Float64Array(channels).fill(1);
  }

  forward(x: Tensor, train: boolean): Tensor {
    if (this.bypass) {
      this.cached = { xhat: x.data, invStd: new Float64Array(0), centered: x.data,
                      shape: x.shape.slice() };
      return x;
    }
    const [b, c, h, w] = x.shape;
    const plane = h * w;
    const count = b * plane;
    const out = Tensor.zeros(x.shape);
    const xd = x.data;
    const od = out.data;
    if (!train) {
      for (let ch = 0; ch < c; ch++) {
        const invStd = 1 / Math.sqrt(this.runningVar[ch] + this.eps);
        const g = this.gamma.value[ch];
        const bta = this.beta.value[ch];
        const mu = this.runningMean[ch];
        for (let n = 0; n < b; n++) {
          const base = (n * c + ch) * plane;
          for (let i = 0; i < plane; i++) {
            od[base + i] = g * (xd[base + i] - mu) * invStd + bta;
          }
        }
      }
      this.cached = null;
      return out;
    }
    const xhat = new Float64Array(xd.length);
    const centered = new Float64Array(xd.length);
    const invStdArr = new Float64Array(c);
    for (let ch = 0; ch < c; ch++) {
      let mean = 0;
      for (let n = 0; n < b; n++) {
        const base = (n * c + ch) * plane;
        for (let i = 0; i < plane; i++) mean += xd[base + i];
      }
      mean /= count;
      let variance = 0;
      for (let n = 0; n < b; n++) {
        const base = (n * c + ch) * plane;
        for (let i = 0; i < plane; i++) {
          const d = xd[base + i] - mean;
          variance += d * d;
        }
      }
      variance /= count;
      const invStd = 1 / Math.sqrt(variance + this.eps);
      invStdArr[ch] = invStd;
      const g = this.gamma.value[ch];
      const bta = this.beta.value[ch];
      for (let n = 0; n < b; n++) {
        const base = (n * c + ch) * plane;
        for (let i = 0; i < plane; i++) {
          const cd = xd[base + i] - mean;
          centered[base + i] = cd;
          const xh = cd * invStd;
          xhat[base + i] = xh;
          od[base + i] = g * xh + bta;
        }
      }
      this.runningMean[ch] = (1 - this.momentum) * this.runningMean[ch] + this.momentum * mean;
      this.runningVar[ch] = (1 - this.momentum) * this.runningVar[ch] + this.momentum * variance;
    }
    this.cached = { xhat, invStd: invStdArr, centered, shape: x.shape.slice() };
    return out;
  }

  backward(gradOut: Tensor): Tensor {
    if (this.bypass) return gradOut;
    const cache = this.cached;
    if (cache === null) throw new Error(`${this.name}: backward without train forward`);
    const [b, c, h, w] = cache.shape;
    const plane = h * w;
    const count = b * plane;
    const gradIn = Tensor.zeros(cache.shape);
    const gd = gradOut.data;
    const gi = gradIn.data;
    for (let ch = 0; ch < c; ch++) {
      const g = this.gamma.value[ch];
      const invStd = cache.invStd[ch];
      let sumDy = 0;
      let sumDyXhat = 0;
      for (let n = 0; n < b; n++) {
        const base = (n * c + ch) * plane;
        for (let i = 0; i < plane; i++) {
          sumDy += gd[base + i];
          sumDyXhat += gd[base + i] * cache.xhat[base + i];
        }
      }
      this.beta.grad[ch] += sumDy;
      this.gamma.grad[ch] += sumDyXhat;
      // dL/dx = (g * invStd / N) * (N*dy - sum(dy) - xhat * sum(dy*xhat))
      const scale = (g * invStd) / count;
      for (let n = 0; n < b; n++) {
        const base = (n * c + ch) * plane;
        for (let i = 0; i < plane; i++) {
          gi[base + i] =
            scale * (count * gd[base + i] - sumDy - cache.xhat[base + i] * sumDyXhat);
        }
      }
    }
    return gradIn;
  }

  params(): Param[] {
    return [this.gamma, this.beta];
  }
}

export class SpikeThreshold {
  private cachedInput: Tensor | null = null;

  constructor(readonly name: string, readonly threshold: number, readonly slope: number) {}

  forward(u: Tensor): Tensor {
    const out = Tensor.zeros(u.shape);
    for (let i = 0; i < u.data.length; i++) {
      out.data[i] = u.data[i] > this.threshold ? 1 : 0;
    }
    this.cachedInput = u;
    return out;
  }

  backward(gradOut: Tensor): Tensor {
    const u = this.cachedInput;
    if (u === null) throw new Error(`${this.name}: backward before forward`);
    const gradIn = Tensor.zeros(u.shape);
    for (let i = 0; i < u.data.length; i++) {
      const s = 1 / (1 + Math.exp(-this.slope * (u.data[i] - this.threshold)));
      gradIn.data[i] = gradOut.data[i] * this.slope * s * (1 - s);
    }
    return gradIn;
  }
}

export class GlobalAvgPool {
  private cachedShape: number[] | null = null;

  forward(x: Tensor): Tensor {
    const [b, c, h, w] = x.shape;
    const plane = h * w;
    const out = Tensor.zeros([b, c]);
    for (let n = 0; n < b; n++) {
      for (let ch = 0; ch < c; ch++) {
        const base = (n * c + ch) * plane;
        let acc = 0;
        for (let i = 0; i < plane; i++) acc += x.data[base + i];
        out.data[n * c + ch] = acc / plane;
      }
    }
    this.cachedShape = x.shape.slice();
    return out;
  }

  backward(gradOut: Tensor): Tensor {
    const shape = this.cachedShape;
    if (shape === null) throw new Error("pool: backward before forward");
    const [b, c, h, w] = shape;
    const plane = h * w;
    const gradIn = Tensor.zeros(shape);
    for (let n = 0; n < b; n++) {
      for (let ch = 0; ch < c; ch++) {
        const g = gradOut.data[n * c + ch] / plane;
        const base = (n * c + ch) * plane;
        for (let i = 0; i < plane; i++) gradIn.data[base + i] = g;
      }
    }
    return gradIn;
  }
}

export class Linear {
  readonly weight: Param;
  readonly bias: Param;
  quantBits: number | null = null;

  private cachedInput: Tensor | null = null;
  private cachedWeights: Float64Array | null = null;

  constructor(
    readonly name: string,
    readonly inFeatures: number,
    readonly outFeatures: number,
    initStd: number,
    gaussian: () => number,
  ) {
    const w = new Float64Array(outFeatures * inFeatures);
    for (let i = 0; i < w.length; i++) w[i] = gaussian() * initStd;
    this.weight = makeParam(`${name}.weight`, w);
    this.bias = makeParam(`${name}.bias`, new Float64Array(outFeatures));
  }

  effectiveWeights(): Float64Array {
    if (this.quantBits === null) return this.weight.value;
    return fakeQuantize(this.weight.value, this.quantBits);
  }

  forward(x: Tensor): Tensor {
    const [b, f] = x.shape;
    if (f !== this.inFeatures) throw new Error(`${this.name}: feature mismatch`);
    const wq = this.effectiveWeights();
    const out = Tensor.zeros([b, this.outFeatures]);
    for (let n = 0; n < b; n++) {
      for (let o = 0; o < this.outFeatures; o++) {
        let acc = this.bias.value[o];
        const wBase = o * f;
        for (let i = 0; i < f; i++) acc += wq[wBase + i] * x.data[n * f + i];
        out.data[n * this.outFeatures + o] = acc;
      }
    }
    this.cachedInput = x;
    this.cachedWeights = wq;
    return out;
  }

  backward(gradOut: Tensor): Tensor {
    const x = this.cachedInput;
    const wq = this.cachedWeights;
    if (x === null || wq === null) throw new Error(`${this.name}: backward before forward`);
    const [b, f] = x.shape;
    const gradIn = Tensor.zeros(x.shape);
    for (let n = 0; n < b; n++) {
      for (let o = 0; o < this.outFeatures; o++) {
        const g = gradOut.data[n * this.outFeatures + o];
        if (g === 0) continue;
        this.bias.grad[o] += g;
        const wBase = o * f;
        for (let i = 0; i < f; i++) {
          this.weight.grad[wBase + i] += x.data[n * f + i] * g; // STE
          gradIn.data[n * f + i] += wq[wBase + i] * g;
        }
      }
    }
    return gradIn;
  }

  params(): Param[] {
    return [this.weight, this.bias];
  }
}
