/**
 * The trainable single-timestep spiking residual network, mirroring the
 * inference engine's topology: an encoding convolution turns pixels into
 * spikes, two residual stages of two blocks each (the second stage doubles
 * channels, downsampling through a 1x1 shortcut), a global average pool
 * over spikes, and a linear classifier on the spike rates.
 *
 * Residual adds happen on pre-activation potentials before the block-final
 * threshold: an identity shortcut contributes its spikes as the real value
 * 1, exactly how the integer engine lifts them at inference.
 */

import { Tensor, makeGaussian, makeRng } from "./tensor.js";
import {
  BatchNorm2d,
  GlobalAvgPool,
  GroupedConv2d,
  Linear,
  Param,
  SpikeThreshold,
} from "./layers.js";

export interface NetworkConfig {
  inChannels: number;
  baseChannels: number;
  groups: number;
  inputHw: number;
  numClasses: number;
  threshold: number;
  weightBits: number;
  surrogateSlope: number;
}

export const DEFAULT_CONFIG: NetworkConfig = {
  inChannels: 3,
  baseChannels: 128,
  groups: 4,
  inputHw: 32,
  numClasses: 10,
  threshold: 1.0,
  weightBits: 8,
  surrogateSlope: 4.0,
};

export interface ConvBn {
  conv: GroupedConv2d;
  bn: BatchNorm2d;
}

export interface Block {
  a: ConvBn;
  b: ConvBn;
  shortcut: ConvBn | null;
  spikeA: SpikeThreshold;
  spikeOut: SpikeThreshold;
}

export class SpikingResNet {
  readonly cfg: NetworkConfig;
  readonly encoding: ConvBn;
  readonly encodingSpike: SpikeThreshold;
  readonly blocks: Block[];
  readonly pool: GlobalAvgPool;
  readonly fc: Linear;

  private cache: { blockInputs: Tensor[] } | null = null;

  constructor(cfg: Partial<NetworkConfig> = {}, seed = 0) {
    this.cfg = { ...DEFAULT_CONFIG, ...cfg };
    const c = this.cfg;
    if (c.baseChannels % c.groups || (2 * c.baseChannels) % c.groups) {
      throw new Error("groups must divide the channel plan");
    }
    const gaussian = makeGaussian(makeRng(seed >>> 0 || 0x5eed));
    const c1 = c.baseChannels;
    const c2 = 2 * c.baseChannels;

    const convBn = (
      name: string,
      inCh: number,
      outCh: number,
      kernel: number,
      stride: number,
      padding: number,
      groups: number,
    ): ConvBn => {
      const fanIn = (inCh / groups) * kernel * kernel;
      const std = Math.sqrt(2 / fanIn); // He init over the fan-in
      return {
        conv: new GroupedConv2d(name, inCh, outCh, kernel, stride, padding, groups, std, gaussian),
        bn: new BatchNorm2d(`${name}.bn`, outCh),
      };
    };
    const spike = (name: string) => new SpikeThreshold(name, c.threshold, c.surrogateSlope);

    this.encoding = convBn("conv1", c.inChannels, c1, 3, 1, 1, 1);
    this.encodingSpike = spike("conv1.spike");
    this.blocks = [
      {
        a: convBn("conv2_1a", c1, c1, 3, 1, 1, c.groups),
        b: convBn("conv2_1b", c1, c1, 3, 1, 1, c.groups),
        shortcut: null,
        spikeA: spike("conv2_1a.spike"),
        spikeOut: spike("conv2_1b.spike"),
      },
      {
        a: convBn("conv2_2a", c1, c1, 3, 1, 1, c.groups),
        b: convBn("conv2_2b", c1, c1, 3, 1, 1, c.groups),
        shortcut: null,
        spikeA: spike("conv2_2a.spike"),
        spikeOut: spike("conv2_2b.spike"),
      },
      {
        a: convBn("conv3_1a", c1, c2, 3, 2, 1, c.groups),
        b: convBn("conv3_1b", c2, c2, 3, 1, 1, c.groups),
        shortcut: convBn("conv3_1s", c1, c2, 1, 2, 0, 1),
        spikeA: spike("conv3_1a.spike"),
        spikeOut: spike("conv3_1b.spike"),
      },
      {
        a: convBn("conv3_2a", c2, c2, 3, 1, 1, c.groups),
        b: convBn("conv3_2b", c2, c2, 3, 1, 1, c.groups),
        shortcut: null,
        spikeA: spike("conv3_2a.spike"),
        spikeOut: spike("conv3_2b.spike"),
      },
    ];
    this.pool = new GlobalAvgPool();
    this.fc = new Linear("fc", c2, c.numClasses, 1 / Math.sqrt(c2), gaussian);
  }

  /** Arm or disarm weight fake-quantization (the QAT fine-tune phase). */
  setQuantBits(bits: number | null): void {
    for (const { conv } of this.convBns()) conv.quantBits = bits;
    this.fc.quantBits = bits;
  }

  convBns(): ConvBn[] {
    const out: ConvBn[] = [this.encoding];
    for (const block of this.blocks) {
      out.push(block.a, block.b);
      if (block.shortcut) out.push(block.shortcut);
    }
    return out;
  }

  params(): Param[] {
    const out: Param[] = [];
    for (const { conv, bn } of this.convBns()) out.push(...conv.params(), ...bn.params());
    out.push(...this.fc.params());
    return out;
  }

  forward(x: Tensor, train: boolean): Tensor {
    const blockInputs: Tensor[] = [];
    let spikes = this.encodingSpike.forward(
      this.encoding.bn.forward(this.encoding.conv.forward(x), train),
    );
    for (const block of this.blocks) {
      blockInputs.push(spikes);
      const uA = block.a.bn.forward(block.a.conv.forward(spikes), train);
      const sA = block.spikeA.forward(uA);
      const uB = block.b.bn.forward(block.b.conv.forward(sA), train);
      const joined = Tensor.zeros(uB.shape);
      if (block.shortcut === null) {
        // identity shortcut: spikes enter the join as the real value 1
        for (let i = 0; i < joined.data.length; i++) {
          joined.data[i] = uB.data[i] + spikes.data[i];
        }
      } else {
        const sc = block.shortcut.bn.forward(block.shortcut.conv.forward(spikes), train);
        for (let i = 0; i < joined.data.length; i++) {
          joined.data[i] = uB.data[i] + sc.data[i];
        }
      }
      spikes = block.spikeOut.forward(joined);
    }
    const rates = this.pool.forward(spikes);
    this.cache = { blockInputs };
    return this.fc.forward(rates);
  }

  backward(gradLogits: Tensor): void {
    if (this.cache === null) throw new Error("backward before forward");
    const gradRates = this.fc.backward(gradLogits);
    let gradSpikes = this.pool.backward(gradRates);
    for (let bi = this.blocks.length - 1; bi >= 0; bi--) {
      const block = this.blocks[bi];
      const gradJoined = block.spikeOut.backward(gradSpikes);
      // the join gradient flows into both the main path and the shortcut
      const gradInputAcc = Tensor.zeros(this.cache.blockInputs[bi].shape);
      if (block.shortcut === null) {
        for (let i = 0; i < gradJoined.data.length; i++) {
          gradInputAcc.data[i] += gradJoined.data[i];
        }
      } else {
        const gSc = block.shortcut.conv.backward(block.shortcut.bn.backward(gradJoined));
        for (let i = 0; i < gSc.data.length; i++) gradInputAcc.data[i] += gSc.data[i];
      }
      const gSA = block.b.conv.backward(block.b.bn.backward(gradJoined));
      const gUA = block.spikeA.backward(gSA);
      const gMain = block.a.conv.backward(block.a.bn.backward(gUA));
      for (let i = 0; i < gMain.data.length; i++) gradInputAcc.data[i] += gMain.data[i];
      gradSpikes = gradInputAcc;
    }
    const gradEncU = this.encodingSpike.backward(gradSpikes);
    this.encoding.conv.backward(this.encoding.bn.backward(gradEncU));
  }
}
