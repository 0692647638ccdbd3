/**
 * Three-stage training protocol.
 *
 * Stage 1 trains a single-time-point encoder-decoder. Stages 2 and 3
 * train the siamese model (synthetic pairs, then real pairs) with the
 * encoder frozen: its variables are created non-trainable, so the
 * optimiser never sees them and their bytes stay identical, which the
 * training log records as before/after checksums.
 *
 * Optimiser: Adam at lr 1e-4; the protocol's "momentum 0.9" is read as
 * the first-moment coefficient beta1 = 0.9.
 */

import { createHash } from "node:crypto";
import { readFileSync, writeFileSync, mkdirSync } from "node:fs";
import { dirname } from "node:path";
import * as tf from "@tensorflow/tfjs";
import { NetConfig, validateConfig } from "./config.js";
import { PairSample, VolumeSample, extractPatch, samplePatchCorner } from "./data.js";
import { diceLoss, hardDice } from "./loss.js";
import { Rng } from "./rng.js";
import { UNet3D } from "./unet.js";

export interface StageState {
  stage: 1 | 2 | 3;
  config: NetConfig;
  frozen: { encoder: boolean; decoder: boolean; aggregation: boolean };
  /** "group/name/weight|bias" -> tensor payload */
  weights: Record<string, { shape: number[]; data: Float32Array }>;
}

export interface EpochLog {
  epoch: number;
  meanLoss: number;
  trainDice: number;
}

export interface TrainLog {
  stage: 1 | 2 | 3;
  seed: number;
  learningRate: number;
  beta1: number;
  epochs: EpochLog[];
  encoderChecksumBefore: string;
  encoderChecksumAfter: string;
  finalLoss: number;
}

export interface TrainOptions {
  epochs?: number;
  learningRate?: number;
  beta1?: number;
  seed?: number;
  /** patch draws per case per epoch */
  patchesPerVolume?: number;
  /** probability a patch is centred on a positive voxel */
  posBias?: number;
  /** stop once training dice reaches this */
  targetDice?: number;
  onEpoch?: (entry: EpochLog) => void;
}

const DEFAULTS: Required<Omit<TrainOptions, "onEpoch">> = {
  epochs: 200,
  learningRate: 1e-4,
  beta1: 0.9,
  seed: 0,
  patchesPerVolume: 4,
  posBias: 0.9,
  targetDice: 1.1, // unreachable: train the full epoch budget unless set
};

export function buildStage1(cfg: Omit<NetConfig, "stage">, seed = 0): UNet3D {
  return new UNet3D({ ...cfg, stage: 1 }).init(seed);
}

/**
 * Siamese model seeded from a stage-1 state: the encoder weights carry
 * over (non-trainable); decoder and aggregation start fresh. Reusing the
 * stage-1 decoder would start training from confident wrong predictions
 * on the still-random aggregation features, and the sigmoid saturates
 * before the dice gradient can recover.
 */
export function buildSiamese(
  stage1: StageState,
  stage: 2 | 3 = 2,
  seed = 0,
): UNet3D {
  if (stage1.stage !== 1) {
    throw new Error(`expected a stage-1 state, got stage ${stage1.stage}`);
  }
  const model = new UNet3D({ ...stage1.config, stage }).init(seed);
  restoreGroup(model, "encoder", stage1.weights);
  return model;
}

export function modelFromState(state: StageState): UNet3D {
  const model = new UNet3D(validateConfig(state.config)).init(0);
  for (const [groupName] of model.groups()) {
    restoreGroup(model, groupName, state.weights);
  }
  return model;
}

function restoreGroup(
  model: UNet3D,
  groupName: string,
  weights: StageState["weights"],
): void {
  const group = model.groups().find(([name]) => name === groupName)![1];
  for (const [name, p] of group) {
    for (const part of ["weight", "bias"] as const) {
      const key = `${groupName}/${name}/${part}`;
      const stored = weights[key];
      if (!stored) throw new Error(`state lacks tensor '${key}'`);
      const variable = p[part] as tf.Variable;
      if (stored.shape.join(",") !== variable.shape.join(",")) {
        throw new Error(
          `tensor '${key}' has shape ${stored.shape}, expected ${variable.shape}`,
        );
      }
      tf.tidy(() => variable.assign(tf.tensor(stored.data, stored.shape as number[])));
    }
  }
}

export function snapshot(model: UNet3D): StageState {
  const weights: StageState["weights"] = {};
  for (const [groupName, group] of model.groups()) {
    for (const [name, p] of group) {
      for (const part of ["weight", "bias"] as const) {
        const t = p[part];
        weights[`${groupName}/${name}/${part}`] = {
          shape: [...t.shape],
          data: new Float32Array(t.dataSync() as Float32Array),
        };
      }
    }
  }
  const frozenEnc = model.config.stage !== 1;
  return {
    stage: model.config.stage,
    config: { ...model.config },
    frozen: { encoder: frozenEnc, decoder: false, aggregation: false },
    weights,
  };
}

/** SHA-256 over the group's tensors in name order, bit-exact. */
export function groupChecksum(
  source: UNet3D | StageState,
  groupName: "encoder" | "decoder" | "aggregation",
): string {
  const hash = createHash("sha256");
  const entries: [string, Float32Array][] = [];
  if (source instanceof UNet3D) {
    const group = source.groups().find(([name]) => name === groupName)![1];
    for (const [name, p] of group) {
      for (const part of ["weight", "bias"] as const) {
        entries.push([`${groupName}/${name}/${part}`, p[part].dataSync() as Float32Array]);
      }
    }
  } else {
    for (const [key, stored] of Object.entries(source.weights)) {
      if (key.startsWith(`${groupName}/`)) entries.push([key, stored.data]);
    }
  }
  entries.sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0));
  for (const [key, data] of entries) {
    hash.update(key);
    hash.update(Buffer.from(data.buffer, data.byteOffset, data.byteLength));
  }
  return hash.digest("hex");
}

interface Batch {
  feed: () => tf.Scalar;
  dispose: () => void;
}

function runTraining(
  model: UNet3D,
  nCases: number,
  makeBatch: (rng: Rng, caseIndex: number) => Batch,
  evalDice: () => number,
  opts: TrainOptions,
): TrainLog {
  if (nCases === 0) throw new Error("empty dataset");
  const o = { ...DEFAULTS, ...opts };
  const optimizer = tf.train.adam(o.learningRate, o.beta1, 0.999, 1e-8);
  const rng = new Rng(o.seed, "train", model.config.stage);
  const log: TrainLog = {
    stage: model.config.stage,
    seed: o.seed,
    learningRate: o.learningRate,
    beta1: o.beta1,
    epochs: [],
    encoderChecksumBefore: groupChecksum(model, "encoder"),
    encoderChecksumAfter: "",
    finalLoss: NaN,
  };

  for (let epoch = 0; epoch < o.epochs; epoch++) {
    let lossSum = 0;
    let steps = 0;
    for (let draw = 0; draw < o.patchesPerVolume; draw++) {
      for (let caseIndex = 0; caseIndex < nCases; caseIndex++) {
        const batch = makeBatch(rng, caseIndex);
        const lossTensor = optimizer.minimize(batch.feed, true)!;
        lossSum += lossTensor.dataSync()[0];
        lossTensor.dispose();
        batch.dispose();
        steps++;
      }
    }
    const entry: EpochLog = {
      epoch,
      meanLoss: lossSum / steps,
      trainDice: evalDice(),
    };
    log.epochs.push(entry);
    opts.onEpoch?.(entry);
    if (entry.trainDice >= o.targetDice) break;
  }

  log.finalLoss = log.epochs[log.epochs.length - 1].meanLoss;
  log.encoderChecksumAfter = groupChecksum(model, "encoder");
  optimizer.dispose();
  return log;
}

function toTensor(patch: Float32Array, size: number): tf.Tensor5D {
  return tf.tensor5d(patch, [1, size, size, size, 1]);
}

/** Train the stage-1 model on (volume, lesion mask) cases. */
export function trainStage1(
  model: UNet3D,
  dataset: VolumeSample[],
  opts: TrainOptions = {},
): { state: StageState; log: TrainLog } {
  const size = model.config.patchSize;
  const o = { ...DEFAULTS, ...opts };
  const log = runTraining(
    model,
    dataset.length,
    (rng, i) => {
      const s = dataset[i];
      const corner = samplePatchCorner(rng, s.dims, s.positives, size, o.posBias);
      const x = toTensor(extractPatch(s.image, s.dims, corner, size), size);
      const t = toTensor(extractPatch(s.target, s.dims, corner, size), size);
      return {
        feed: () => diceLoss(model.forward(x), t),
        dispose: () => {
          x.dispose();
          t.dispose();
        },
      };
    },
    () => meanDatasetDice(dataset, (s) => predictSample(model, s)),
    opts,
  );
  return { state: snapshot(model), log };
}

function trainPairs(
  model: UNet3D,
  dataset: PairSample[],
  opts: TrainOptions,
): { state: StageState; log: TrainLog } {
  const size = model.config.patchSize;
  const o = { ...DEFAULTS, ...opts };
  const log = runTraining(
    model,
    dataset.length,
    (rng, i) => {
      const s = dataset[i];
      const corner = samplePatchCorner(rng, s.dims, s.positives, size, o.posBias);
      const x1 = toTensor(extractPatch(s.image1, s.dims, corner, size), size);
      const x2 = toTensor(extractPatch(s.image2, s.dims, corner, size), size);
      const t = toTensor(extractPatch(s.target, s.dims, corner, size), size);
      return {
        feed: () => diceLoss(model.forwardPair(x1, x2), t),
        dispose: () => {
          x1.dispose();
          x2.dispose();
          t.dispose();
        },
      };
    },
    () => meanDatasetDice(dataset, (s) => predictPairSample(model, s)),
    opts,
  );
  return { state: snapshot(model), log };
}

/** Siamese training on synthetic pairs from the primary toolkit. */
export function trainStage2(
  model: UNet3D,
  dataset: PairSample[],
  opts: TrainOptions = {},
): { state: StageState; log: TrainLog } {
  if (model.config.stage !== 2) {
    throw new Error(`expected a stage-2 model, got stage ${model.config.stage}`);
  }
  return trainPairs(model, dataset, opts);
}

/** Siamese fine-tuning on real pairs; same contract as stage 2. */
export function trainStage3(
  model: UNet3D,
  dataset: PairSample[],
  opts: TrainOptions = {},
): { state: StageState; log: TrainLog } {
  if (model.config.stage !== 3) {
    throw new Error(`expected a stage-3 model, got stage ${model.config.stage}`);
  }
  return trainPairs(model, dataset, opts);
}

/** Mean hard Dice of full-volume predictions over a dataset. */
export function meanDatasetDice<S extends { target: Float32Array }>(
  dataset: S[],
  predict: (sample: S) => Float32Array,
): number {
  let sum = 0;
  for (const s of dataset) sum += hardDice(predict(s), s.target);
  return sum / dataset.length;
}

/**
 * Whole-volume stage-1 prediction. Spatial dims are zero-padded up to
 * the pooling stride multiple and the output cropped back, so output
 * geometry always equals input geometry.
 */
export function predictSample(model: UNet3D, s: VolumeSample): Float32Array {
  return predictWhole(model, s.dims, [s.image]);
}

export function predictPairSample(model: UNet3D, s: PairSample): Float32Array {
  return predictWhole(model, s.dims, [s.image1, s.image2]);
}

function predictWhole(
  model: UNet3D,
  dims: [number, number, number],
  images: Float32Array[],
): Float32Array {
  const stride = 2 ** (model.config.levels - 1);
  const padded = dims.map((d) => Math.ceil(d / stride) * stride);
  const out = tf.tidy(() => {
    const inputs = images.map((img) => {
      // file order is x-fastest, so the tensor axes come out [z, y, x]
      let t: tf.Tensor = tf.tensor(img, [1, dims[2], dims[1], dims[0], 1]);
      t = tf.pad(t, [
        [0, 0],
        [0, padded[2] - dims[2]],
        [0, padded[1] - dims[1]],
        [0, padded[0] - dims[0]],
        [0, 0],
      ]);
      return t as tf.Tensor5D;
    });
    const probs =
      inputs.length === 1
        ? model.forward(inputs[0])
        : model.forwardPair(inputs[0], inputs[1]);
    return tf.slice(probs, [0, 0, 0, 0, 0], [1, dims[2], dims[1], dims[0], 1]);
  });
  const data = new Float32Array(out.dataSync() as Float32Array);
  out.dispose();
  return data;
}

export function saveState(state: StageState, path: string): void {
  const weights: Record<string, { shape: number[]; b64: string }> = {};
  for (const [key, t] of Object.entries(state.weights)) {
    weights[key] = {
      shape: t.shape,
      b64: Buffer.from(t.data.buffer, t.data.byteOffset, t.data.byteLength).toString("base64"),
    };
  }
  mkdirSync(dirname(path), { recursive: true });
  writeFileSync(
    path,
    JSON.stringify(
      { stage: state.stage, config: state.config, frozen: state.frozen, weights },
      null,
      1,
    ),
  );
}

export function loadState(path: string): StageState {
  const raw = JSON.parse(readFileSync(path, "utf8"));
  const weights: StageState["weights"] = {};
  for (const [key, t] of Object.entries(
    raw.weights as Record<string, { shape: number[]; b64: string }>,
  )) {
    const buf = Buffer.from(t.b64, "base64");
    // node pools small Buffers, so the view may start unaligned; copy out
    const bytes = new ArrayBuffer(buf.byteLength);
    new Uint8Array(bytes).set(buf);
    weights[key] = { shape: t.shape, data: new Float32Array(bytes) };
  }
  return {
    stage: raw.stage,
    config: raw.config,
    frozen: raw.frozen,
    weights,
  };
}
