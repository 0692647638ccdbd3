import * as tf from "@tensorflow/tfjs";
import { describe, expect, it } from "vitest";
import { ConfigError, DEFAULT_CONFIG, levelChannels, validateConfig } from "../src/config.js";
import { Rng } from "../src/rng.js";
import { UNet3D, upsample2 } from "../src/unet.js";
import { predictPairSample, predictSample } from "../src/train.js";
import { PairSample, VolumeSample, normalize } from "../src/data.js";

function randomVolume(seed: number, dims: [number, number, number]): Float32Array {
  const rng = new Rng(seed, "vol");
  const out = new Float32Array(dims[0] * dims[1] * dims[2]);
  for (let i = 0; i < out.length; i++) out[i] = rng.normal();
  return out;
}

function sampleFor(dims: [number, number, number], seed: number): VolumeSample {
  const image = normalize(randomVolume(seed, dims));
  return {
    id: "s",
    dims,
    image,
    target: new Float32Array(image.length),
    positives: new Uint32Array(0),
    geometry: { data: image, dims, spacing: [1, 1, 1], srows: new Float32Array(12) },
  };
}

function pairFor(dims: [number, number, number], seed: number): PairSample {
  const a = sampleFor(dims, seed);
  return {
    id: "p",
    dims,
    image1: a.image,
    image2: normalize(randomVolume(seed + 1, dims)),
    target: a.target,
    positives: a.positives,
    geometry: a.geometry,
  };
}

describe("config", () => {
  it("accepts the default desk-scale configuration", () => {
    expect(DEFAULT_CONFIG).toMatchObject({ levels: 3, baseChannels: 8, patchSize: 16 });
    expect(() => validateConfig({ ...DEFAULT_CONFIG, stage: 1 })).not.toThrow();
  });

  it("rejects a patch size not divisible by the pooling stride", () => {
    expect(() =>
      validateConfig({ levels: 3, baseChannels: 8, patchSize: 18, stage: 1 }),
    ).toThrow(ConfigError);
  });

  it("rejects nonsensical level and channel counts", () => {
    expect(() => validateConfig({ levels: 1, baseChannels: 8, patchSize: 16, stage: 1 })).toThrow(ConfigError);
    expect(() => validateConfig({ levels: 3, baseChannels: 0, patchSize: 16, stage: 1 })).toThrow(ConfigError);
    expect(() =>
      validateConfig({ levels: 3, baseChannels: 8, patchSize: 16, stage: 4 as 1 }),
    ).toThrow(ConfigError);
  });
});

describe("upsample2", () => {
  it("doubles each spatial axis by nearest-neighbour copying", () => {
    const x = tf.tensor5d([1, 2, 3, 4, 5, 6, 7, 8], [1, 2, 2, 2, 1]);
    const y = upsample2(x);
    expect(y.shape).toEqual([1, 4, 4, 4, 1]);
    const data = y.dataSync();
    // voxel (d,h,w) of the output equals input voxel (d>>1, h>>1, w>>1)
    const inData = x.dataSync();
    for (let d = 0; d < 4; d++) {
      for (let h = 0; h < 4; h++) {
        for (let w = 0; w < 4; w++) {
          const got = data[w + 4 * (h + 4 * d)];
          const want = inData[(w >> 1) + 2 * ((h >> 1) + 2 * (d >> 1))];
          expect(got).toBe(want);
        }
      }
    }
    x.dispose();
    y.dispose();
  });
});

describe("UNet3D shapes", () => {
  it("maps a 16-cube to a 16-cube of probabilities in [0,1]", () => {
    const model = new UNet3D({ ...DEFAULT_CONFIG, stage: 1 }).init(0);
    const x = tf.tensor5d(randomVolume(3, [16, 16, 16]), [1, 16, 16, 16, 1]);
    const y = model.forward(x);
    expect(y.shape).toEqual([1, 16, 16, 16, 1]);
    const data = y.dataSync();
    for (const v of data) {
      expect(v).toBeGreaterThanOrEqual(0);
      expect(v).toBeLessThanOrEqual(1);
    }
    x.dispose();
    model.dispose();
  });

  it("gives aggregation convolutions 2C input and C output channels at every level", () => {
    for (const levels of [2, 3, 4]) {
      const cfg = { levels, baseChannels: 4, patchSize: 2 ** (levels - 1), stage: 2 as const };
      const model = new UNet3D(cfg).init(0);
      expect(model.aggregation.size).toBe(levels);
      for (let i = 0; i < levels; i++) {
        const c = levelChannels(cfg, i);
        const w = model.aggregation.get(`agg${i}`)!.weight;
        expect(w.shape).toEqual([1, 1, 1, 2 * c, c]);
      }
      model.dispose();
    }
  });

  it("keeps output geometry equal to input geometry end to end", () => {
    const model = new UNet3D({ ...DEFAULT_CONFIG, stage: 2 }).init(0);
    // 11x10x9 is not a multiple of the pooling stride on any axis
    for (const dims of [[16, 16, 16], [11, 10, 9]] as [number, number, number][]) {
      const pair = pairFor(dims, 17);
      const probs = predictPairSample(model, pair);
      expect(probs.length).toBe(dims[0] * dims[1] * dims[2]);
      for (const v of probs) {
        expect(v).toBeGreaterThanOrEqual(0);
        expect(v).toBeLessThanOrEqual(1);
      }
    }
    model.dispose();
  });

  it("keeps stage-1 whole-volume prediction geometry too", () => {
    const model = new UNet3D({ ...DEFAULT_CONFIG, stage: 1 }).init(0);
    const dims: [number, number, number] = [13, 16, 10];
    const probs = predictSample(model, sampleFor(dims, 5));
    expect(probs.length).toBe(13 * 16 * 10);
    model.dispose();
  });
});

describe("siamese weight sharing", () => {
  it("feeding (x, x) is deterministic and both paths read one encoder", () => {
    const model = new UNet3D({ ...DEFAULT_CONFIG, stage: 2 }).init(1);
    const x = tf.tensor5d(randomVolume(9, [16, 16, 16]), [1, 16, 16, 16, 1]);
    const y1 = model.forwardPair(x, x).dataSync();
    const y2 = model.forwardPair(x, x).dataSync();
    expect(Array.from(y1)).toEqual(Array.from(y2));

    // the sharing is literal: encode() on both paths reads the same
    // tf.Variable objects, so there is exactly one encoder storage
    const feats1 = model.encode(x);
    const feats2 = model.encode(x);
    feats1.forEach((f, i) => {
      const a = f.dataSync();
      const b = feats2[i].dataSync();
      expect(Array.from(a)).toEqual(Array.from(b));
    });
    x.dispose();
    model.dispose();
  });
});
