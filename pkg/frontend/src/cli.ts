/**
 * Trainer command line.
 *
 *   node dist/cli.js train --data DIR --out model.snnm [--epochs N]
 *       [--qat-epochs N] [--base-channels N] [--groups N] [--seed N]
 *       [--batch-size N] [--lr F] [--limit N]
 *   node dist/cli.js train --synthetic 400 --out model.snnm ...
 *
 * --data expects CIFAR-10 binary batches (data_batch_1.bin .. _5.bin and
 * test_batch.bin); --synthetic trains on a seeded color-pattern dataset
 * instead, for smoke runs without the dataset. The exported file is the
 * quantized model format the inference engine loads.
 */

import { existsSync, readdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { loadCifar10 } from "./cifar.js";
import { buildQuantizedModel, evaluateQuantized, serializeModel } from "./export.js";
import { SpikingResNet } from "./network.js";
import { Dataset, evaluate, syntheticDataset, trainQat } from "./train.js";

interface Args {
  [key: string]: string | boolean;
}

function parseArgs(argv: string[]): { command: string; args: Args } {
  const command = argv[0] ?? "";
  const args: Args = {};
  for (let i = 1; i < argv.length; i++) {
    const token = argv[i];
    if (!token.startsWith("--")) throw new Error(`unexpected argument ${token}`);
    const key = token.slice(2);
    const next = argv[i + 1];
    if (next === undefined || next.startsWith("--")) {
      args[key] = true;
    } else {
      args[key] = next;
      i += 1;
    }
  }
  return { command, args };
}

function num(args: Args, key: string, fallback: number): number {
  const v = args[key];
  if (v === undefined || v === true) return fallback;
  const parsed = Number(v);
  if (!Number.isFinite(parsed)) throw new Error(`--${key} expects a number, got ${v}`);
  return parsed;
}

function limitDataset(ds: Dataset, limit: number): Dataset {
  if (limit >= ds.count) return ds;
  const plane = ds.channels * ds.hw * ds.hw;
  return {
    images: ds.images.slice(0, limit * plane),
    labels: ds.labels.slice(0, limit),
    count: limit,
    channels: ds.channels,
    hw: ds.hw,
  };
}

function cmdTrain(args: Args): number {
  const out = args["out"];
  if (typeof out !== "string") throw new Error("--out is required");
  const seed = num(args, "seed", 0);
  const baseChannels = num(args, "base-channels", 128);
  const groups = num(args, "groups", 4);
  const bits = num(args, "bits", 8);

  let train: Dataset;
  let test: Dataset | null = null;
  if (args["synthetic"] !== undefined) {
    const n = num(args, "synthetic", 400);
    const hw = num(args, "input-hw", 32);
    train = syntheticDataset(n, 3, hw, 10, seed, seed);
    test = syntheticDataset(Math.max(50, Math.floor(n / 4)), 3, hw, 10, seed + 1, seed);
  } else {
    const dir = args["data"];
    if (typeof dir !== "string") throw new Error("--data DIR or --synthetic N is required");
    const batches = readdirSync(dir)
      .filter((f) => /^data_batch_\d\.bin$/.test(f))
      .sort()
      .map((f) => join(dir, f));
    if (batches.length === 0) throw new Error(`no data_batch_*.bin files in ${dir}`);
    train = loadCifar10(batches);
    const testPath = join(dir, "test_batch.bin");
    test = existsSync(testPath) ? loadCifar10([testPath]) : null;
  }
  const limit = num(args, "limit", 0);
  if (limit > 0) {
    train = limitDataset(train, limit);
    if (test !== null) test = limitDataset(test, Math.max(10, Math.floor(limit / 5)));
  }

  const model = new SpikingResNet(
    {
      baseChannels,
      groups,
      inputHw: train.hw,
      weightBits: bits,
      surrogateSlope: num(args, "surrogate-slope", 4.0),
    },
    seed,
  );
  const logs = trainQat(
    model,
    train,
    {
      epochs: num(args, "epochs", 500),
      qatEpochs: num(args, "qat-epochs", 100),
      batchSize: num(args, "batch-size", 64),
      lr: num(args, "lr", 0.05),
      seed,
      weightBits: bits,
    },
    test,
    (log) => {
      const testStr = log.testAccuracy === null ? "" : ` test=${(log.testAccuracy * 100).toFixed(2)}%`;
      console.error(
        `epoch ${log.epoch} [${log.phase}] loss=${log.loss.toFixed(4)} ` +
          `train=${(log.trainAccuracy * 100).toFixed(2)}%${testStr}`,
      );
    },
  );

  const qm = buildQuantizedModel(model, bits);
  writeFileSync(out, serializeModel(qm));
  const evalSet = test ?? train;
  const floatAcc = evaluate(model, evalSet);
  const quantAcc = evaluateQuantized(qm, evalSet.images, evalSet.labels, evalSet.count);
  console.error(`wrote ${out}`);
  console.log(
    JSON.stringify({
      epochs: logs.length,
      finalLoss: logs[logs.length - 1]?.loss ?? null,
      floatAccuracy: floatAcc,
      quantizedAccuracy: quantAcc,
    }),
  );
  return 0;
}

export function main(argv: string[]): number {
  try {
    const { command, args } = parseArgs(argv);
    if (command === "train") return cmdTrain(args);
    console.error(`usage: cli.js train [options]; unknown command ${command || "(none)"}`);
    return 2;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

if (process.argv[1] && process.argv[1].endsWith("cli.js")) {
  process.exit(main(process.argv.slice(2)));
}
