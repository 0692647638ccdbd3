/**
 * Deterministic PRNG so training runs are reproducible from one root
 * seed. sfc32 core seeded through a string hash; every consumer derives
 * its own named stream, so adding a draw in one place cannot shift the
 * numbers seen by another.
 */

import { createHash } from "node:crypto";

export class Rng {
  private a: number;
  private b: number;
  private c: number;
  private d: number;
  private spare: number | null = null;

  constructor(seed: number, ...stream: (string | number)[]) {
    const digest = createHash("sha256")
      .update([seed, ...stream].join("\x1f"))
      .digest();
    this.a = digest.readUInt32LE(0);
    this.b = digest.readUInt32LE(4);
    this.c = digest.readUInt32LE(8);
    this.d = digest.readUInt32LE(12);
    for (let i = 0; i < 12; i++) this.next(); // scramble past seeding artifacts
  }

  /** uniform in [0, 1) */
  next(): number {
    const t = (this.a + this.b) | 0;
    this.a = this.b ^ (this.b >>> 9);
    this.b = (this.c + (this.c << 3)) | 0;
    this.c = (this.c << 21) | (this.c >>> 11);
    this.d = (this.d + 1) | 0;
    this.c = (this.c + (((t + this.d) | 0) >>> 0)) | 0;
    return (((t + this.d) | 0) >>> 0) / 4294967296;
  }

  /** uniform integer in [0, n) */
  int(n: number): number {
    return Math.floor(this.next() * n);
  }

  /** standard normal via Box-Muller */
  normal(): number {
    if (this.spare !== null) {
      const v = this.spare;
      this.spare = null;
      return v;
    }
    const u = 1 - this.next(); // avoid log(0)
    const v = this.next();
    const r = Math.sqrt(-2 * Math.log(u));
    this.spare = r * Math.sin(2 * Math.PI * v);
    return r * Math.cos(2 * Math.PI * v);
  }

  /** He-style fan-in scaled init for a conv weight of the given size */
  fillHe(out: Float32Array, fanIn: number): Float32Array {
    const sd = Math.sqrt(2 / fanIn);
    for (let i = 0; i < out.length; i++) out[i] = this.normal() * sd;
    return out;
  }
}
