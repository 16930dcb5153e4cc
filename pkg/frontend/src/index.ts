export * from "./tensor.js";
export * from "./quantize.js";
export * from "./layers.js";
export * from "./network.js";
export * from "./train.js";
export * from "./cifar.js";
export * from "./export.js";
