/**
 * Export tests: BN fusion exactness, quantized-model structure, file
 * format validity, and the cross-language round trip, where the Python
 * inference engine loads the exported bytes and must produce the same
 * labels as the local integer evaluator, bit for bit.
 */

import { execFileSync, spawnSync } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import { writeCifar10 } from "../src/cifar.js";
import {
  buildQuantizedModel,
  evaluateQuantized,
  fuseConvBn,
  quantizedForward,
  serializeModel,
} from "../src/export.js";
import { SpikingResNet } from "../src/network.js";
import { Tensor, makeRng } from "../src/tensor.js";
import { evaluate, syntheticDataset, trainQat } from "../src/train.js";

const TINY = { baseChannels: 8, groups: 2, inputHw: 8 };

function pythonEngineAvailable(): boolean {
  const probe = spawnSync("python3", ["-c", "import snnaccel"], { encoding: "utf-8" });
  return probe.status === 0;
}

const HAS_PYTHON = pythonEngineAvailable();

function trainedTinyModel(seed: number, cfg = TINY): SpikingResNet {
  const train = syntheticDataset(100, 3, cfg.inputHw, 10, seed, seed);
  const model = new SpikingResNet(cfg, seed);
  trainQat(model, train, { epochs: 4, qatEpochs: 2, batchSize: 20, lr: 0.08, seed });
  return model;
}

describe("BN fusion at export", () => {
  it("fused conv equals conv followed by eval-mode BN", () => {
    // float-only training keeps BN live so the fold is nontrivial
    const train = syntheticDataset(100, 3, 8, 10, 3, 3);
    const model = new SpikingResNet(TINY, 3);
    trainQat(model, train, { epochs: 4, qatEpochs: 0, batchSize: 20, lr: 0.08, seed: 3 });
    const rng = makeRng(8);
    const cb = model.blocks[0].a;
    const fused = fuseConvBn(cb);
    const x = Tensor.fromArray(
      [1, 8, 8, 8],
      Float64Array.from({ length: 8 * 64 }, () => (rng() > 0.6 ? 1 : 0)),
    );
    const direct = cb.bn.forward(cb.conv.forward(x), false);
    // run the same conv with fused weights and bias, no BN
    const saveW = cb.conv.weight.value.slice();
    const saveB = cb.conv.bias.value.slice();
    cb.conv.weight.value.set(fused.weights);
    cb.conv.bias.value.set(fused.bias);
    cb.conv.quantBits = null;
    const fusedOut = cb.conv.forward(x);
    cb.conv.weight.value.set(saveW);
    cb.conv.bias.value.set(saveB);
    for (let i = 0; i < direct.size; i++) {
      const scale = Math.max(1, Math.abs(direct.data[i]));
      expect(Math.abs(direct.data[i] - fusedOut.data[i]) / scale).toBeLessThan(1e-10);
    }
  });

  it("fusing the whole model leaves float eval labels unchanged", () => {
    const train = syntheticDataset(100, 3, 8, 10, 5, 5);
    const model = new SpikingResNet(TINY, 5);
    trainQat(model, train, { epochs: 4, qatEpochs: 0, batchSize: 20, lr: 0.08, seed: 5 });
    const test = syntheticDataset(50, 3, 8, 10, 6, 5);
    model.setQuantBits(null);
    const before = evaluate(model, test);
    // fold every BN into its conv, then neutralize the BN layers
    for (const cb of model.convBns()) {
      const fused = fuseConvBn(cb);
      cb.conv.weight.value.set(fused.weights);
      cb.conv.bias.value.set(fused.bias);
      cb.bn.gamma.value.fill(1);
      cb.bn.beta.value.fill(0);
      cb.bn.runningMean.fill(0);
      cb.bn.runningVar.fill(1 - cb.bn.eps);
    }
    const after = evaluate(model, test);
    expect(Math.abs(after - before)).toBeLessThan(0.001);
  });
});

describe("quantized model structure", () => {
  it("holds integer weights in range with aligned residual scales", () => {
    const model = trainedTinyModel(7);
    const qm = buildQuantizedModel(model);
    const layers = [qm.encoding];
    for (const block of qm.blocks) {
      layers.push(block.a, block.b);
      if (block.shortcut) layers.push(block.shortcut);
    }
    for (const layer of layers) {
      for (const w of layer.weights) {
        expect(Number.isInteger(w)).toBe(true);
        expect(w).toBeGreaterThanOrEqual(-128);
        expect(w).toBeLessThanOrEqual(127);
      }
    }
    for (const block of qm.blocks) {
      if (block.shortcut !== null) {
        expect(block.shortcut.accExp).toBe(block.b.accExp);
        expect(block.shortcut.thresholdQ).toBeNull();
      } else {
        expect(block.b.accExp).toBeGreaterThanOrEqual(0);
      }
      expect(block.a.thresholdQ).not.toBeNull();
      expect(block.b.thresholdQ).not.toBeNull();
    }
    expect(qm.encoding.isEncoding).toBe(true);
    expect(qm.inputQuant).toEqual({ bits: 8, scaleExp: 7 });
  });

  it("serializes with the expected header and manifest", () => {
    const model = trainedTinyModel(9);
    const data = serializeModel(buildQuantizedModel(model));
    expect(new TextDecoder().decode(data.subarray(0, 8))).toBe("SNNMODEL");
    const view = new DataView(data.buffer, data.byteOffset);
    expect(view.getUint32(8, true)).toBe(1); // format version
    const manifestLen = view.getUint32(12, true);
    const manifest = JSON.parse(
      new TextDecoder().decode(data.subarray(16, 16 + manifestLen)),
    );
    expect(manifest.kind).toBe("quantized");
    expect(manifest.layers[0].name).toBe("conv1");
    expect(manifest.layers.length).toBe(10); // 9 convs + shortcut
    expect(manifest.blocks.length).toBe(4);
    // every blob lies inside the file
    const blobBytes = data.length - 16 - manifestLen;
    for (const entry of manifest.layers) {
      expect(entry.weights.offset + entry.weights.length).toBeLessThanOrEqual(blobBytes);
      expect(entry.bias.length).toBe(entry.out_channels * 4);
    }
  });
});

describe.skipIf(!HAS_PYTHON)("cross-language round trip", () => {
  it("Python engine loads the export and matches our labels exactly", () => {
    // CIFAR-shaped model so the batch file format applies
    const cfg = { baseChannels: 8, groups: 2, inputHw: 32 };
    const train = syntheticDataset(60, 3, 32, 10, 21, 21);
    const model = new SpikingResNet(cfg, 21);
    trainQat(model, train, { epochs: 2, qatEpochs: 1, batchSize: 20, lr: 0.08, seed: 21 });
    const qm = buildQuantizedModel(model);

    const dir = mkdtempSync(join(tmpdir(), "snn-export-"));
    const modelPath = join(dir, "model.snnm");
    writeFileSync(modelPath, serializeModel(qm));

    const test = syntheticDataset(24, 3, 32, 10, 22, 21);
    const batchPath = join(dir, "batch.bin");
    writeFileSync(batchPath, writeCifar10(test));

    const csv = execFileSync(
      "python3",
      ["-m", "snnaccel.cli", "infer", "--model", modelPath, "--images", batchPath],
      { encoding: "utf-8" },
    );
    const lines = csv.trim().split("\n").slice(1);
    expect(lines.length).toBe(24);

    // our evaluator must read the batch the same way Python does:
    // bytes / 255, so rebuild images from the serialized batch
    const plane = 3 * 32 * 32;
    const batchBytes = writeCifar10(test);
    let agree = 0;
    for (const line of lines) {
      const [idxStr, predStr] = line.split(",");
      const idx = Number(idxStr);
      const image = new Float64Array(plane);
      for (let p = 0; p < plane; p++) {
        image[p] = batchBytes[idx * 3073 + 1 + p] / 255;
      }
      const local = quantizedForward(qm, image);
      if (local.label === Number(predStr)) agree += 1;
    }
    expect(agree).toBe(24); // bit-exact agreement, stronger than the 0.5% budget

    // trainer-reported quantized accuracy equals engine accuracy on the
    // same set (same labels on every image implies equal accuracy)
    const localAcc = evaluateQuantized(qm, test.images, test.labels, test.count);
    let engineCorrect = 0;
    for (const line of lines) {
      const [idxStr, predStr] = line.split(",");
      if (Number(predStr) === test.labels[Number(idxStr)]) engineCorrect += 1;
    }
    expect(Math.abs(localAcc - engineCorrect / 24)).toBeLessThan(0.005);
  });

  it("exported file passes the engine's validation end to end (exit 0)", () => {
    const model = trainedTinyModel(33, { baseChannels: 8, groups: 2, inputHw: 32 });
    const dir = mkdtempSync(join(tmpdir(), "snn-export-"));
    const modelPath = join(dir, "model.snnm");
    writeFileSync(modelPath, serializeModel(buildQuantizedModel(model)));
    const batchPath = join(dir, "batch.bin");
    writeFileSync(batchPath, writeCifar10(syntheticDataset(4, 3, 32, 10, 1, 33)));
    const run = spawnSync(
      "python3",
      ["-m", "snnaccel.cli", "infer", "--model", modelPath, "--images", batchPath],
      { encoding: "utf-8" },
    );
    expect(run.status).toBe(0);
    const sim = spawnSync(
      "python3",
      ["-m", "snnaccel.cli", "simulate", "--model", modelPath],
      { encoding: "utf-8" },
    );
    expect(sim.status).toBe(0);
    expect(sim.stdout).toContain("initiation_interval_cycles");
  });
});
