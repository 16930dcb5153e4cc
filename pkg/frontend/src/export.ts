/**
 * Export path: fold batch norm into conv weights, quantize everything to
 * the fixed-point deployment format, and serialize the model file the
 * Python inference engine reads.
 *
 * Scale alignment mirrors deployment exactly: branches meeting at a
 * residual add are quantized with the smaller of their natural scale
 * exponents so the add needs no rescaling, and identity shortcuts require
 * a nonnegative join exponent (a spike enters the join as 2^accExp).
 *
 * The quantized evaluator below runs the exported integers directly
 * (doubles hold them exactly), so its labels match the engine bit for bit.
 */

import {
  QuantParams,
  computeScale,
  quantizeValue,
  roundHalfAwayFromZero,
  scaleForValues,
} from "./quantize.js";
import { ConvBn, SpikingResNet } from "./network.js";

const MAGIC = "SNNMODEL";
const FORMAT_VERSION = 1;
const INT32_MIN = -(2 ** 31);
const INT32_MAX = 2 ** 31 - 1;

export interface QuantizedConv {
  name: string;
  inChannels: number;
  outChannels: number;
  kernel: number;
  stride: number;
  padding: number;
  groups: number;
  isEncoding: boolean;
  isResidual1x1: boolean;
  weightBits: number;
  weightScaleExp: number;
  accExp: number;
  thresholdQ: number | null;
  weights: Float64Array; // integer-valued, (out, in/g, k, k) row-major
  bias: Float64Array; // integer-valued, accumulator scale
}

export interface QuantizedFc {
  inFeatures: number;
  outFeatures: number;
  weightBits: number;
  weightScaleExp: number;
  accExp: number;
  weights: Float64Array;
  bias: Float64Array;
}

export interface QuantizedModel {
  config: {
    inChannels: number;
    baseChannels: number;
    groups: number;
    weightBits: number;
    numClasses: number;
    inputHw: number;
    threshold: number;
  };
  inputQuant: QuantParams;
  encoding: QuantizedConv;
  blocks: { a: QuantizedConv; b: QuantizedConv; shortcut: QuantizedConv | null }[];
  poolChannels: number;
  fc: QuantizedFc;
}

interface FusedConv {
  weights: Float64Array;
  bias: Float64Array;
}

/** Fold BN (running statistics) into the conv's weights and bias. A
 * bypassed BN was already folded, so its conv carries the fused values. */
export function fuseConvBn(cb: ConvBn): FusedConv {
  const conv = cb.conv;
  if (cb.bn.bypass) {
    return { weights: conv.weight.value.slice(), bias: conv.bias.value.slice() };
  }
  const outCh = conv.outChannels;
  const perOut = conv.weight.value.length / outCh;
  const weights = new Float64Array(conv.weight.value.length);
  const bias = new Float64Array(outCh);
  for (let o = 0; o < outCh; o++) {
    const s = cb.bn.gamma.value[o] / Math.sqrt(cb.bn.runningVar[o] + cb.bn.eps);
    for (let i = 0; i < perOut; i++) {
      weights[o * perOut + i] = conv.weight.value[o * perOut + i] * s;
    }
    bias[o] = (conv.bias.value[o] - cb.bn.runningMean[o]) * s + cb.bn.beta.value[o];
  }
  return { weights, bias };
}

/**
 * Fold every BN into its conv in place and bypass the BN layers. Runs at
 * the float-to-QAT transition so the fine-tune phase trains the exact
 * weights deployment will quantize.
 */
export function foldBatchNorm(model: SpikingResNet): void {
  for (const cb of model.convBns()) {
    if (cb.bn.bypass) continue;
    const fused = fuseConvBn(cb);
    cb.conv.weight.value.set(fused.weights);
    cb.conv.bias.value.set(fused.bias);
    cb.bn.bypass = true;
  }
}

function clampInt32(v: number, context: string): number {
  if (v < INT32_MIN || v > INT32_MAX) {
    throw new Error(`${context}: value ${v} exceeds the 32-bit budget`);
  }
  return v;
}

export function buildQuantizedModel(model: SpikingResNet, bits?: number): QuantizedModel {
  const cfg = model.cfg;
  const wBits = bits ?? cfg.weightBits;
  const inputQuant = computeScale(1.0, 8); // pixel range [0, 1]

  const naturalExp = (fused: FusedConv) => scaleForValues(fused.weights, wBits).scaleExp;

  const quantizeConv = (
    cb: ConvBn,
    fused: FusedConv,
    forcedExp: number | null,
    withThreshold: boolean,
    isEncoding: boolean,
    isResidual1x1: boolean,
  ): QuantizedConv => {
    const conv = cb.conv;
    const wExp = forcedExp ?? naturalExp(fused);
    const params: QuantParams = { bits: wBits, scaleExp: wExp };
    const weights = new Float64Array(fused.weights.length);
    for (let i = 0; i < weights.length; i++) {
      weights[i] = quantizeValue(fused.weights[i], params);
    }
    const accExp = wExp + (isEncoding ? inputQuant.scaleExp : 0);
    const accScale = 2 ** accExp;
    const bias = new Float64Array(conv.outChannels);
    for (let o = 0; o < bias.length; o++) {
      bias[o] = clampInt32(roundHalfAwayFromZero(fused.bias[o] * accScale),
                           `${conv.name} bias`);
    }
    const thresholdQ = withThreshold
      ? clampInt32(roundHalfAwayFromZero(cfg.threshold * accScale), `${conv.name} threshold`)
      : null;
    return {
      name: conv.name,
      inChannels: conv.inChannels,
      outChannels: conv.outChannels,
      kernel: conv.kernel,
      stride: conv.stride,
      padding: conv.padding,
      groups: conv.groups,
      isEncoding,
      isResidual1x1,
      weightBits: wBits,
      weightScaleExp: wExp,
      accExp,
      thresholdQ,
      weights,
      bias,
    };
  };

  const encoding = quantizeConv(model.encoding, fuseConvBn(model.encoding), null, true, true, false);
  const blocks = model.blocks.map((block) => {
    const fusedA = fuseConvBn(block.a);
    const fusedB = fuseConvBn(block.b);
    if (block.shortcut === null) {
      const joinExp = naturalExp(fusedB);
      if (joinExp < 0) {
        throw new Error(
          `${block.b.conv.name}: identity-shortcut join needs a nonnegative scale exponent`,
        );
      }
      return {
        a: quantizeConv(block.a, fusedA, null, true, false, false),
        b: quantizeConv(block.b, fusedB, joinExp, true, false, false),
        shortcut: null,
      };
    }
    const fusedS = fuseConvBn(block.shortcut);
    const joinExp = Math.min(naturalExp(fusedB), naturalExp(fusedS));
    return {
      a: quantizeConv(block.a, fusedA, null, true, false, false),
      b: quantizeConv(block.b, fusedB, joinExp, true, false, false),
      shortcut: quantizeConv(block.shortcut, fusedS, joinExp, false, false, true),
    };
  });

  const fcEffective = model.fc.weight.value;
  const fcParams = scaleForValues(fcEffective, wBits);
  const fcWeights = new Float64Array(fcEffective.length);
  for (let i = 0; i < fcWeights.length; i++) {
    fcWeights[i] = quantizeValue(fcEffective[i], fcParams);
  }
  const fcScale = 2 ** fcParams.scaleExp;
  const fcBias = new Float64Array(model.fc.outFeatures);
  for (let o = 0; o < fcBias.length; o++) {
    fcBias[o] = clampInt32(roundHalfAwayFromZero(model.fc.bias.value[o] * fcScale), "fc bias");
  }
  return {
    config: {
      inChannels: cfg.inChannels,
      baseChannels: cfg.baseChannels,
      groups: cfg.groups,
      weightBits: wBits,
      numClasses: cfg.numClasses,
      inputHw: cfg.inputHw,
      threshold: cfg.threshold,
    },
    inputQuant,
    encoding,
    blocks,
    poolChannels: 2 * cfg.baseChannels,
    fc: {
      inFeatures: model.fc.inFeatures,
      outFeatures: model.fc.outFeatures,
      weightBits: wBits,
      weightScaleExp: fcParams.scaleExp,
      accExp: fcParams.scaleExp,
      weights: fcWeights,
      bias: fcBias,
    },
  };
}

// ---------------------------------------------------------------------------
// Serialization (the engine's model file format)
// ---------------------------------------------------------------------------

class BlobWriter {
  chunks: Uint8Array[] = [];
  offset = 0;

  addInt8(values: Float64Array): { offset: number; length: number } {
    const raw = new Int8Array(values.length);
    for (let i = 0; i < values.length; i++) raw[i] = values[i];
    return this.add(new Uint8Array(raw.buffer));
  }

  addInt32(values: Float64Array): { offset: number; length: number } {
    const raw = new Uint8Array(values.length * 4);
    const view = new DataView(raw.buffer);
    for (let i = 0; i < values.length; i++) view.setInt32(i * 4, values[i], true);
    return this.add(raw);
  }

  add(raw: Uint8Array): { offset: number; length: number } {
    const entry = { offset: this.offset, length: raw.length };
    this.chunks.push(raw);
    this.offset += raw.length;
    return entry;
  }

  data(): Uint8Array {
    const out = new Uint8Array(this.offset);
    let at = 0;
    for (const chunk of this.chunks) {
      out.set(chunk, at);
      at += chunk.length;
    }
    return out;
  }
}

export function serializeModel(qm: QuantizedModel): Uint8Array {
  const writer = new BlobWriter();

  const convEntry = (layer: QuantizedConv) => ({
    name: layer.name,
    in_channels: layer.inChannels,
    out_channels: layer.outChannels,
    kernel: layer.kernel,
    stride: layer.stride,
    padding: layer.padding,
    groups: layer.groups,
    is_encoding: layer.isEncoding,
    is_residual_1x1: layer.isResidual1x1,
    weight_bits: layer.weightBits,
    weight_scale_exp: layer.weightScaleExp,
    acc_exp: layer.accExp,
    threshold_q: layer.thresholdQ,
    weights: writer.addInt8(layer.weights),
    bias: writer.addInt32(layer.bias),
  });

  const layers = [convEntry(qm.encoding)];
  const blocks: (string | null)[][] = [];
  for (const block of qm.blocks) {
    layers.push(convEntry(block.a));
    layers.push(convEntry(block.b));
    const names: (string | null)[] = [block.a.name, block.b.name, null];
    if (block.shortcut !== null) {
      layers.push(convEntry(block.shortcut));
      names[2] = block.shortcut.name;
    }
    blocks.push(names);
  }
  const manifest = {
    kind: "quantized",
    config: {
      in_channels: qm.config.inChannels,
      base_channels: qm.config.baseChannels,
      groups: qm.config.groups,
      weight_bits: qm.config.weightBits,
      num_classes: qm.config.numClasses,
      input_hw: qm.config.inputHw,
      threshold: qm.config.threshold,
    },
    input_quant: { bits: qm.inputQuant.bits, scale_exp: qm.inputQuant.scaleExp },
    layers,
    blocks,
    pool: { channels: qm.poolChannels, kind: "avg" },
    fc: {
      in_features: qm.fc.inFeatures,
      out_features: qm.fc.outFeatures,
      weight_bits: qm.fc.weightBits,
      weight_scale_exp: qm.fc.weightScaleExp,
      acc_exp: qm.fc.accExp,
      weights: writer.addInt8(qm.fc.weights),
      bias: writer.addInt32(qm.fc.bias),
    },
  };
  const manifestBytes = new TextEncoder().encode(JSON.stringify(manifest));
  const blobs = writer.data();
  const out = new Uint8Array(16 + manifestBytes.length + blobs.length);
  out.set(new TextEncoder().encode(MAGIC), 0);
  const view = new DataView(out.buffer);
  view.setUint32(8, FORMAT_VERSION, true);
  view.setUint32(12, manifestBytes.length, true);
  out.set(manifestBytes, 16);
  out.set(blobs, 16 + manifestBytes.length);
  return out;
}

export function exportModel(model: SpikingResNet, bits?: number): Uint8Array {
  return serializeModel(buildQuantizedModel(model, bits));
}

// ---------------------------------------------------------------------------
// Integer-exact evaluation of the exported model
// ---------------------------------------------------------------------------

function convInt(
  layer: QuantizedConv,
  x: Float64Array,
  h: number,
  w: number,
): { out: Float64Array; oh: number; ow: number } {
  const k = layer.kernel;
  const oh = Math.floor((h + 2 * layer.padding - k) / layer.stride) + 1;
  const ow = Math.floor((w + 2 * layer.padding - k) / layer.stride) + 1;
  const inPerGroup = layer.inChannels / layer.groups;
  const outPerGroup = layer.outChannels / layer.groups;
  const out = new Float64Array(layer.outChannels * oh * ow);
  for (let o = 0; o < layer.outChannels; o++) {
    const g = Math.floor(o / outPerGroup);
    const wBase = o * inPerGroup * k * k;
    for (let y = 0; y < oh; y++) {
      for (let z = 0; z < ow; z++) {
        let acc = layer.bias[o];
        for (let ic = 0; ic < inPerGroup; ic++) {
          const cAbs = g * inPerGroup + ic;
          for (let ky = 0; ky < k; ky++) {
            const iy = y * layer.stride + ky - layer.padding;
            if (iy < 0 || iy >= h) continue;
            for (let kx = 0; kx < k; kx++) {
              const ix = z * layer.stride + kx - layer.padding;
              if (ix < 0 || ix >= w) continue;
              acc += x[(cAbs * h + iy) * w + ix] * layer.weights[wBase + ic * k * k + ky * k + kx];
            }
          }
        }
        out[(o * oh + y) * ow + z] = acc;
      }
    }
  }
  return { out, oh, ow };
}

function thresholdMap(acc: Float64Array, thresholdQ: number): Float64Array {
  const out = new Float64Array(acc.length);
  for (let i = 0; i < acc.length; i++) out[i] = acc[i] > thresholdQ ? 1 : 0;
  return out;
}

/**
 * Classify one image (channels, hw, hw; values in [0, 1]) with the
 * exported integers. Matches the Python engine's output exactly.
 */
export function quantizedForward(
  qm: QuantizedModel,
  image: Float64Array,
): { label: number; scores: Float64Array } {
  const hw = qm.config.inputHw;
  const scale = 2 ** qm.inputQuant.scaleExp;
  const lo = -(2 ** (qm.inputQuant.bits - 1));
  const hi = 2 ** (qm.inputQuant.bits - 1) - 1;
  const qIn = new Float64Array(image.length);
  for (let i = 0; i < image.length; i++) {
    qIn[i] = Math.min(hi, Math.max(lo, roundHalfAwayFromZero(image[i] * scale)));
  }
  let enc = convInt(qm.encoding, qIn, hw, hw);
  let spikes = thresholdMap(enc.out, qm.encoding.thresholdQ as number);
  let curH = enc.oh;
  let curW = enc.ow;
  for (const block of qm.blocks) {
    const a = convInt(block.a, spikes, curH, curW);
    const sA = thresholdMap(a.out, block.a.thresholdQ as number);
    const b = convInt(block.b, sA, a.oh, a.ow);
    const joined = new Float64Array(b.out.length);
    if (block.shortcut === null) {
      const lift = 2 ** block.b.accExp;
      for (let i = 0; i < joined.length; i++) joined[i] = b.out[i] + spikes[i] * lift;
    } else {
      const sc = convInt(block.shortcut, spikes, curH, curW);
      for (let i = 0; i < joined.length; i++) joined[i] = b.out[i] + sc.out[i];
    }
    spikes = thresholdMap(joined, block.b.thresholdQ as number);
    curH = b.oh;
    curW = b.ow;
  }
  const plane = curH * curW;
  const sums = new Float64Array(qm.poolChannels);
  for (let c = 0; c < qm.poolChannels; c++) {
    let acc = 0;
    for (let i = 0; i < plane; i++) acc += spikes[c * plane + i];
    sums[c] = acc;
  }
  const scores = new Float64Array(qm.fc.outFeatures);
  for (let o = 0; o < qm.fc.outFeatures; o++) {
    let acc = plane * qm.fc.bias[o];
    for (let i = 0; i < qm.fc.inFeatures; i++) {
      acc += qm.fc.weights[o * qm.fc.inFeatures + i] * sums[i];
    }
    scores[o] = acc;
  }
  let label = 0;
  for (let j = 1; j < scores.length; j++) {
    if (scores[j] > scores[label]) label = j;
  }
  return { label, scores };
}

/** Accuracy of the exported integers over a dataset. */
export function evaluateQuantized(
  qm: QuantizedModel,
  images: Float64Array,
  labels: Uint8Array,
  count: number,
): number {
  const plane = qm.config.inChannels * qm.config.inputHw * qm.config.inputHw;
  let correct = 0;
  for (let i = 0; i < count; i++) {
    const { label } = quantizedForward(qm, images.subarray(i * plane, (i + 1) * plane));
    if (label === labels[i]) correct += 1;
  }
  return correct / count;
}
