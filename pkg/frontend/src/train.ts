/**
 * Quantization-aware training for the spiking network.
 *
 * The recipe has two phases: plain float training, then a fine-tune with
 * weight fake-quantization armed (forward at deployment precision,
 * gradients straight through the rounding). Spike thresholds always train
 * through the surrogate gradient.
 */

import { Tensor, makeRng } from "./tensor.js";
import { Param, zeroGrads } from "./layers.js";
import { SpikingResNet } from "./network.js";
import { foldBatchNorm } from "./export.js";

export interface Dataset {
  images: Float64Array; // (n, channels, hw, hw), values in [0, 1]
  labels: Uint8Array;
  count: number;
  channels: number;
  hw: number;
}

export interface TrainConfig {
  timesteps: number; // this trainer implements the single-timestep path
  epochs: number;
  qatEpochs: number;
  batchSize: number;
  lr: number;
  momentum: number;
  weightDecay: number;
  weightBits: number;
  seed: number;
}

export const DEFAULT_TRAIN_CONFIG: TrainConfig = {
  timesteps: 1,
  epochs: 500,
  qatEpochs: 100,
  batchSize: 64,
  lr: 0.05,
  momentum: 0.9,
  weightDecay: 5e-4,
  weightBits: 8,
  seed: 0,
};

export interface EpochLog {
  epoch: number;
  phase: "float" | "qat";
  loss: number;
  trainAccuracy: number;
  testAccuracy: number | null;
}

/** Mean softmax cross-entropy; returns the loss and d(loss)/d(logits). */
export function softmaxCrossEntropy(
  logits: Tensor,
  labels: ArrayLike<number>,
  offset = 0,
): { loss: number; grad: Tensor } {
  const [b, k] = logits.shape;
  const grad = Tensor.zeros(logits.shape);
  let loss = 0;
  for (let n = 0; n < b; n++) {
    let maxv = -Infinity;
    for (let j = 0; j < k; j++) maxv = Math.max(maxv, logits.data[n * k + j]);
    let denom = 0;
    for (let j = 0; j < k; j++) denom += Math.exp(logits.data[n * k + j] - maxv);
    const label = labels[offset + n];
    loss += -(logits.data[n * k + label] - maxv - Math.log(denom));
    for (let j = 0; j < k; j++) {
      const p = Math.exp(logits.data[n * k + j] - maxv) / denom;
      grad.data[n * k + j] = (p - (j === label ? 1 : 0)) / b;
    }
  }
  return { loss: loss / b, grad };
}

export class SgdMomentum {
  private velocities = new Map<Param, Float64Array>();

  constructor(
    public lr: number,
    public momentum: number,
    public weightDecay: number,
  ) {}

  step(params: Param[]): void {
    for (const p of params) {
      let v = this.velocities.get(p);
      if (v === undefined) {
        v = new Float64Array(p.value.length);
        this.velocities.set(p, v);
      }
      const decay = p.name.endsWith(".weight") ? this.weightDecay : 0;
      for (let i = 0; i < p.value.length; i++) {
        const g = p.grad[i] + decay * p.value[i];
        v[i] = this.momentum * v[i] - this.lr * g;
        p.value[i] += v[i];
      }
    }
  }
}

function batchTensor(ds: Dataset, indices: number[], start: number, size: number): {
  x: Tensor;
  labels: number[];
} {
  const take = Math.min(size, indices.length - start);
  const plane = ds.channels * ds.hw * ds.hw;
  const x = Tensor.zeros([take, ds.channels, ds.hw, ds.hw]);
  const labels: number[] = [];
  for (let i = 0; i < take; i++) {
    const src = indices[start + i] * plane;
    x.data.set(ds.images.subarray(src, src + plane), i * plane);
    labels.push(ds.labels[indices[start + i]]);
  }
  return { x, labels };
}

export function evaluate(model: SpikingResNet, ds: Dataset, batchSize = 64): number {
  let correct = 0;
  const indices = Array.from({ length: ds.count }, (_, i) => i);
  for (let start = 0; start < ds.count; start += batchSize) {
    const { x, labels } = batchTensor(ds, indices, start, batchSize);
    const logits = model.forward(x, false);
    const [b, k] = logits.shape;
    for (let n = 0; n < b; n++) {
      let best = 0;
      for (let j = 1; j < k; j++) {
        if (logits.data[n * k + j] > logits.data[n * k + best]) best = j;
      }
      if (best === labels[n]) correct += 1;
    }
  }
  return correct / ds.count;
}

export function trainQat(
  model: SpikingResNet,
  train: Dataset,
  cfg: Partial<TrainConfig> = {},
  test: Dataset | null = null,
  onEpoch?: (log: EpochLog) => void,
): EpochLog[] {
  const c = { ...DEFAULT_TRAIN_CONFIG, ...cfg };
  if (c.timesteps !== 1) {
    throw new Error("this trainer implements the single-timestep path only");
  }
  const rng = makeRng((c.seed ^ 0x7a17) >>> 0);
  const optimizer = new SgdMomentum(c.lr, c.momentum, c.weightDecay);
  const params = model.params();
  const logs: EpochLog[] = [];

  const runEpoch = (epoch: number, phase: "float" | "qat") => {
    const indices = Array.from({ length: train.count }, (_, i) => i);
    for (let i = indices.length - 1; i > 0; i--) {
      const j = Math.floor(rng() * (i + 1));
      [indices[i], indices[j]] = [indices[j], indices[i]];
    }
    let lossSum = 0;
    let batches = 0;
    let correct = 0;
    for (let start = 0; start < train.count; start += c.batchSize) {
      const { x, labels } = batchTensor(train, indices, start, c.batchSize);
      zeroGrads(params);
      const logits = model.forward(x, true);
      const { loss, grad } = softmaxCrossEntropy(logits, labels);
      model.backward(grad);
      optimizer.step(params);
      lossSum += loss;
      batches += 1;
      const [b, k] = logits.shape;
      for (let n = 0; n < b; n++) {
        let best = 0;
        for (let j = 1; j < k; j++) {
          if (logits.data[n * k + j] > logits.data[n * k + best]) best = j;
        }
        if (best === labels[n]) correct += 1;
      }
    }
    const log: EpochLog = {
      epoch,
      phase,
      loss: lossSum / Math.max(batches, 1),
      trainAccuracy: correct / train.count,
      testAccuracy: test === null ? null : evaluate(model, test, c.batchSize),
    };
    logs.push(log);
    onEpoch?.(log);
  };

  model.setQuantBits(null);
  for (let e = 0; e < c.epochs; e++) runEpoch(e, "float");
  if (c.qatEpochs > 0) {
    // the fine-tune phase runs on the BN-folded network at deployment
    // precision, so exported weights are exactly what training saw
    foldBatchNorm(model);
    model.setQuantBits(c.weightBits);
    for (let e = 0; e < c.qatEpochs; e++) runEpoch(c.epochs + e, "qat");
  }
  return logs;
}

/**
 * Seeded synthetic dataset: each class is a distinct mean color with
 * noise, separable enough that a short smoke train beats chance. The
 * palette comes from its own seed so train and test splits can share
 * class colors while drawing independent noise.
 */
export function syntheticDataset(
  count: number,
  channels: number,
  hw: number,
  numClasses: number,
  seed: number,
  paletteSeed = 0,
): Dataset {
  const rng = makeRng(seed ^ 0xda7a);
  const paletteRng = makeRng(paletteSeed ^ 0xc0105);
  const plane = channels * hw * hw;
  const images = new Float64Array(count * plane);
  const labels = new Uint8Array(count);
  const palette: number[][] = [];
  for (let c = 0; c < numClasses; c++) {
    palette.push(Array.from({ length: channels }, () => 0.15 + 0.7 * paletteRng()));
  }
  for (let i = 0; i < count; i++) {
    const label = i % numClasses;
    labels[i] = label;
    for (let ch = 0; ch < channels; ch++) {
      const mean = palette[label][ch];
      for (let p = 0; p < hw * hw; p++) {
        const v = mean + 0.12 * (rng() - 0.5);
        images[i * plane + ch * hw * hw + p] = Math.min(1, Math.max(0, v));
      }
    }
  }
  return { images, labels, count, channels, hw };
}
