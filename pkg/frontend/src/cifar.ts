/**
 * CIFAR-10 binary batch parser: records of one label byte followed by
 * 3072 channel-planar RGB pixel bytes, 3073 bytes per record.
 */

import { readFileSync } from "node:fs";
import { Dataset } from "./train.js";

export const RECORD_BYTES = 3073;
export const IMAGE_HW = 32;
export const IMAGE_CHANNELS = 3;

export function parseCifar10(data: Uint8Array): Dataset {
  if (data.length === 0 || data.length % RECORD_BYTES !== 0) {
    throw new Error(
      `batch length ${data.length} is not a positive multiple of ${RECORD_BYTES}`,
    );
  }
  const count = data.length / RECORD_BYTES;
  const plane = IMAGE_CHANNELS * IMAGE_HW * IMAGE_HW;
  const images = new Float64Array(count * plane);
  const labels = new Uint8Array(count);
  for (let i = 0; i < count; i++) {
    const base = i * RECORD_BYTES;
    const label = data[base];
    if (label > 9) throw new Error(`label ${label} outside [0, 9]`);
    labels[i] = label;
    for (let p = 0; p < plane; p++) {
      images[i * plane + p] = data[base + 1 + p] / 255;
    }
  }
  return { images, labels, count, channels: IMAGE_CHANNELS, hw: IMAGE_HW };
}

export function loadCifar10(paths: string[]): Dataset {
  const parts = paths.map((p) => parseCifar10(new Uint8Array(readFileSync(p))));
  const count = parts.reduce((a, d) => a + d.count, 0);
  const plane = IMAGE_CHANNELS * IMAGE_HW * IMAGE_HW;
  const images = new Float64Array(count * plane);
  const labels = new Uint8Array(count);
  let at = 0;
  for (const part of parts) {
    images.set(part.images, at * plane);
    labels.set(part.labels, at);
    at += part.count;
  }
  return { images, labels, count, channels: IMAGE_CHANNELS, hw: IMAGE_HW };
}

/** Serialize a dataset back to batch bytes (synthetic test fixtures). */
export function writeCifar10(ds: Dataset): Uint8Array {
  if (ds.channels !== IMAGE_CHANNELS || ds.hw !== IMAGE_HW) {
    throw new Error("only 3x32x32 datasets fit the batch format");
  }
  const plane = IMAGE_CHANNELS * IMAGE_HW * IMAGE_HW;
  const out = new Uint8Array(ds.count * RECORD_BYTES);
  for (let i = 0; i < ds.count; i++) {
    out[i * RECORD_BYTES] = ds.labels[i];
    for (let p = 0; p < plane; p++) {
      out[i * RECORD_BYTES + 1 + p] = Math.min(
        255,
        Math.max(0, Math.round(ds.images[i * plane + p] * 255)),
      );
    }
  }
  return out;
}
