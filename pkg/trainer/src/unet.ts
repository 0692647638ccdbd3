/**
 * 3-D U-Net over tfjs core ops with explicit parameter storage.
 *
 * The parameters live in three named groups (encoder, decoder,
 * aggregation) so stage transfer and freezing operate on whole groups.
 * The siamese forward runs the one encoder over both time points; the
 * sharing is literal because both calls read the same tf.Variable
 * objects. Aggregation joins the two feature streams at every level by
 * a learned 1x1x1 convolution from 2C down to C channels, where C is
 * that level's encoder channel count.
 */

import * as tf from "@tensorflow/tfjs";
import { NetConfig, levelChannels, validateConfig } from "./config.js";
import { Rng } from "./rng.js";

export interface ConvParams {
  weight: tf.Variable<tf.Rank.R5>;
  bias: tf.Variable<tf.Rank.R1>;
}

export type ParamGroup = Map<string, ConvParams>;

let instanceCounter = 0;

export class UNet3D {
  readonly config: NetConfig;
  readonly encoder: ParamGroup = new Map();
  readonly decoder: ParamGroup = new Map();
  readonly aggregation: ParamGroup = new Map();
  /** tf variable-name prefix; keeps ensembles from colliding in the engine */
  readonly scope: string;

  constructor(config: NetConfig) {
    this.config = validateConfig(config);
    this.scope = `unet${instanceCounter++}`;
  }

  private addConv(
    group: ParamGroup,
    groupName: string,
    name: string,
    kernel: number,
    inC: number,
    outC: number,
    trainable: boolean,
    init: (size: number, fanIn: number) => Float32Array,
  ): void {
    const shape: [number, number, number, number, number] = [
      kernel, kernel, kernel, inC, outC,
    ];
    const fanIn = kernel ** 3 * inC;
    const weight = tf.variable(
      tf.tensor5d(init(kernel ** 3 * inC * outC, fanIn), shape),
      trainable,
      `${this.scope}/${groupName}/${name}/weight`,
    );
    const bias = tf.variable(
      tf.zeros([outC]),
      trainable,
      `${this.scope}/${groupName}/${name}/bias`,
    );
    group.set(name, { weight: weight as ConvParams["weight"], bias: bias as ConvParams["bias"] });
  }

  /** Create freshly initialised parameters for the configured stage. */
  init(seed: number): this {
    const cfg = this.config;
    const rng = new Rng(seed, "init");
    const he = (size: number, fanIn: number) => rng.fillHe(new Float32Array(size), fanIn);
    const encTrainable = cfg.stage === 1;

    for (let i = 0; i < cfg.levels; i++) {
      const cIn = i === 0 ? 1 : levelChannels(cfg, i - 1);
      const c = levelChannels(cfg, i);
      this.addConv(this.encoder, "encoder", `enc${i}a`, 3, cIn, c, encTrainable, he);
      this.addConv(this.encoder, "encoder", `enc${i}b`, 3, c, c, encTrainable, he);
    }
    for (let i = cfg.levels - 2; i >= 0; i--) {
      const c = levelChannels(cfg, i);
      // upsampled 2C from below concatenated with the C-channel skip
      this.addConv(this.decoder, "decoder", `dec${i}a`, 3, 3 * c, c, true, he);
      this.addConv(this.decoder, "decoder", `dec${i}b`, 3, c, c, true, he);
    }
    this.addConv(this.decoder, "decoder", "head", 1, cfg.baseChannels, 1, true, he);
    if (cfg.stage !== 1) {
      for (let i = 0; i < cfg.levels; i++) {
        const c = levelChannels(cfg, i);
        this.addConv(this.aggregation, "aggregation", `agg${i}`, 1, 2 * c, c, true, he);
      }
    }
    return this;
  }

  /** Per-level encoder features, finest first; length == levels. */
  encode(x: tf.Tensor5D): tf.Tensor5D[] {
    const feats: tf.Tensor5D[] = [];
    let h = x;
    for (let i = 0; i < this.config.levels; i++) {
      h = convRelu(h, this.encoder.get(`enc${i}a`)!);
      h = convRelu(h, this.encoder.get(`enc${i}b`)!);
      feats.push(h);
      if (i < this.config.levels - 1) {
        h = tf.maxPool3d(h, 2, 2, "same");
      }
    }
    return feats;
  }

  /** Fuse two feature streams: concat to 2C, reduce back to C, per level. */
  aggregate(a: tf.Tensor5D[], b: tf.Tensor5D[]): tf.Tensor5D[] {
    return a.map((fa, i) =>
      convRelu(tf.concat([fa, b[i]], 4), this.aggregation.get(`agg${i}`)!),
    );
  }

  /** Decoder ladder from per-level features down to voxel probabilities. */
  decode(feats: tf.Tensor5D[]): tf.Tensor5D {
    let h = feats[this.config.levels - 1];
    for (let i = this.config.levels - 2; i >= 0; i--) {
      h = tf.concat([upsample2(h), feats[i]], 4);
      h = convRelu(h, this.decoder.get(`dec${i}a`)!);
      h = convRelu(h, this.decoder.get(`dec${i}b`)!);
    }
    const head = this.decoder.get("head")!;
    return tf.sigmoid(
      tf.add(tf.conv3d(h, head.weight, 1, "same"), head.bias),
    ) as tf.Tensor5D;
  }

  /** Stage-1 forward: one time point in, probability map out. */
  forward(x: tf.Tensor5D): tf.Tensor5D {
    return this.decode(this.encode(x));
  }

  /** Siamese forward: both time points through the shared encoder. */
  forwardPair(x1: tf.Tensor5D, x2: tf.Tensor5D): tf.Tensor5D {
    return this.decode(this.aggregate(this.encode(x1), this.encode(x2)));
  }

  groups(): [string, ParamGroup][] {
    return [
      ["encoder", this.encoder],
      ["decoder", this.decoder],
      ["aggregation", this.aggregation],
    ];
  }

  dispose(): void {
    for (const [, group] of this.groups()) {
      for (const p of group.values()) {
        p.weight.dispose();
        p.bias.dispose();
      }
    }
  }
}

function convRelu(x: tf.Tensor5D, p: ConvParams): tf.Tensor5D {
  return tf.relu(
    tf.add(tf.conv3d(x, p.weight, 1, "same"), p.bias),
  ) as tf.Tensor5D;
}

/** 2x nearest-neighbour upsampling along the three spatial axes. */
export function upsample2(x: tf.Tensor5D): tf.Tensor5D {
  const [n, d, h, w, c] = x.shape;
  let y: tf.Tensor = tf.reshape(tf.stack([x, x], 2), [n, 2 * d, h, w, c]);
  y = tf.reshape(tf.stack([y, y], 3), [n, 2 * d, 2 * h, w, c]);
  y = tf.reshape(tf.stack([y, y], 4), [n, 2 * d, 2 * h, 2 * w, c]);
  return y as tf.Tensor5D;
}
