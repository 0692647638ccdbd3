/**
 * Dataset plumbing: manifest loading, per-volume normalisation, patch
 * sampling and toy fixtures. Batch assembly details here are harness
 * conveniences; only the manifest format is an external contract.
 */

import { readFileSync } from "node:fs";
import { resolve, dirname } from "node:path";
import { NiftiVolume, readNifti, sameGeometry } from "./nifti.js";
import { Rng } from "./rng.js";

export interface ManifestCase {
  id: string;
  paths: Record<string, string>;
}

export class DataError extends Error {}

/** Load `{cases: [{id, paths}]}` (or a bare case list) and resolve paths. */
export function loadManifest(path: string): ManifestCase[] {
  let parsed: unknown;
  try {
    parsed = JSON.parse(readFileSync(path, "utf8"));
  } catch (err) {
    throw new DataError(`${path}: unreadable manifest (${err})`);
  }
  const entries = Array.isArray(parsed)
    ? parsed
    : (parsed as { cases?: unknown }).cases;
  if (!Array.isArray(entries)) {
    throw new DataError(`${path}: expected a case list or {"cases": [...]}`);
  }
  const base = dirname(resolve(path));
  const seen = new Set<string>();
  return entries.map((entry, i) => {
    const c = entry as Partial<ManifestCase>;
    if (typeof c.id !== "string" || !c.id) {
      throw new DataError(`${path}: case #${i} lacks an 'id'`);
    }
    if (seen.has(c.id)) {
      throw new DataError(`${path}: duplicate case id '${c.id}'`);
    }
    seen.add(c.id);
    if (typeof c.paths !== "object" || c.paths === null) {
      throw new DataError(`${path}: case '${c.id}' lacks a 'paths' object`);
    }
    const paths: Record<string, string> = {};
    for (const [role, p] of Object.entries(c.paths)) {
      paths[role] = resolve(base, p);
    }
    return { id: c.id, paths };
  });
}

function requireRole(c: ManifestCase, role: string): string {
  const p = c.paths[role];
  if (!p) {
    throw new DataError(
      `case '${c.id}' has no '${role}' entry (roles present: ${Object.keys(c.paths).sort()})`,
    );
  }
  return p;
}

/** One single-time-point training example, normalised, file voxel order. */
export interface VolumeSample {
  id: string;
  dims: [number, number, number];
  image: Float32Array;
  target: Float32Array;
  /** linear indices of positive target voxels, for positive-biased patches */
  positives: Uint32Array;
  geometry: NiftiVolume;
}

/** One longitudinal example: two time points plus the new-lesion target. */
export interface PairSample {
  id: string;
  dims: [number, number, number];
  image1: Float32Array;
  image2: Float32Array;
  target: Float32Array;
  positives: Uint32Array;
  geometry: NiftiVolume;
}

/** z-score in place; constant volumes become all zeros */
export function normalize(data: Float32Array): Float32Array {
  let mean = 0;
  for (const v of data) mean += v;
  mean /= data.length;
  let varsum = 0;
  for (const v of data) varsum += (v - mean) ** 2;
  const sd = Math.sqrt(varsum / data.length);
  const scale = sd > 1e-6 ? 1 / sd : 0;
  for (let i = 0; i < data.length; i++) data[i] = (data[i] - mean) * scale;
  return data;
}

function positiveIndices(mask: Float32Array): Uint32Array {
  const out: number[] = [];
  for (let i = 0; i < mask.length; i++) if (mask[i] !== 0) out.push(i);
  return Uint32Array.from(out);
}

function binarize(mask: Float32Array): Float32Array {
  for (let i = 0; i < mask.length; i++) mask[i] = mask[i] !== 0 ? 1 : 0;
  return mask;
}

/** Load (volume, lesion mask) cases; roles `flair` + `lesion_mask`. */
export function loadVolumeDataset(cases: ManifestCase[]): VolumeSample[] {
  return cases.map((c) => {
    const image = readNifti(requireRole(c, "flair"));
    const mask = readNifti(requireRole(c, "lesion_mask"));
    if (!sameGeometry(image, mask)) {
      throw new DataError(`case '${c.id}': volume and mask grids differ`);
    }
    const target = binarize(mask.data);
    return {
      id: c.id,
      dims: image.dims,
      image: normalize(image.data),
      target,
      positives: positiveIndices(target),
      geometry: image,
    };
  });
}

/** Load longitudinal cases; roles `t1` + `t2` + `gt` as the synthetic
 * pair manifests emit them. */
export function loadPairDataset(cases: ManifestCase[]): PairSample[] {
  return cases.map((c) => {
    const t1 = readNifti(requireRole(c, "t1"));
    const t2 = readNifti(requireRole(c, "t2"));
    const gt = readNifti(requireRole(c, "gt"));
    if (!sameGeometry(t1, t2) || !sameGeometry(t1, gt)) {
      throw new DataError(`case '${c.id}': t1/t2/gt grids differ`);
    }
    const target = binarize(gt.data);
    return {
      id: c.id,
      dims: t1.dims,
      image1: normalize(t1.data),
      image2: normalize(t2.data),
      target,
      positives: positiveIndices(target),
      geometry: t2,
    };
  });
}

/** Copy a cubic patch (edge `size`) out of a file-order volume. */
export function extractPatch(
  data: Float32Array,
  dims: [number, number, number],
  corner: [number, number, number],
  size: number,
): Float32Array {
  const [nx, ny] = dims;
  const [cx, cy, cz] = corner;
  const out = new Float32Array(size ** 3);
  let o = 0;
  for (let z = 0; z < size; z++) {
    for (let y = 0; y < size; y++) {
      const rowStart = cx + (cy + y) * nx + (cz + z) * nx * ny;
      out.set(data.subarray(rowStart, rowStart + size), o);
      o += size;
    }
  }
  return out;
}

/** Choose a patch corner, biased toward containing positive voxels. */
export function samplePatchCorner(
  rng: Rng,
  dims: [number, number, number],
  positives: Uint32Array,
  size: number,
  posBias: number,
): [number, number, number] {
  const clamp = (v: number, axis: number) =>
    Math.max(0, Math.min(dims[axis] - size, v));
  if (positives.length > 0 && rng.next() < posBias) {
    const idx = positives[rng.int(positives.length)];
    const x = idx % dims[0];
    const y = Math.floor(idx / dims[0]) % dims[1];
    const z = Math.floor(idx / (dims[0] * dims[1]));
    const half = Math.floor(size / 2);
    return [clamp(x - half, 0), clamp(y - half, 1), clamp(z - half, 2)];
  }
  return [
    clamp(rng.int(Math.max(1, dims[0] - size + 1)), 0),
    clamp(rng.int(Math.max(1, dims[1] - size + 1)), 1),
    clamp(rng.int(Math.max(1, dims[2] - size + 1)), 2),
  ];
}

/** Synthetic blob fixtures: noisy cubes with a few bright balls. */
export function makeBlobDataset(
  n: number,
  edge: number,
  seed: number,
): VolumeSample[] {
  const out: VolumeSample[] = [];
  for (let k = 0; k < n; k++) {
    const rng = new Rng(seed, "blobs", k);
    const image = new Float32Array(edge ** 3);
    const target = new Float32Array(edge ** 3);
    for (let i = 0; i < image.length; i++) image[i] = rng.normal() * 0.1;
    const nBlobs = 1 + rng.int(3);
    for (let b = 0; b < nBlobs; b++) {
      const r = 2 + rng.next() * 2;
      const cx = r + rng.next() * (edge - 2 * r);
      const cy = r + rng.next() * (edge - 2 * r);
      const cz = r + rng.next() * (edge - 2 * r);
      for (let z = 0; z < edge; z++) {
        for (let y = 0; y < edge; y++) {
          for (let x = 0; x < edge; x++) {
            if ((x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 <= r * r) {
              const i = x + y * edge + z * edge * edge;
              image[i] = 1 + rng.normal() * 0.05;
              target[i] = 1;
            }
          }
        }
      }
    }
    const dims: [number, number, number] = [edge, edge, edge];
    out.push({
      id: `blob${k}`,
      dims,
      image: normalize(image),
      target,
      positives: positiveIndices(target),
      geometry: {
        data: image,
        dims,
        spacing: [1, 1, 1],
        srows: new Float32Array([1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0]),
      },
    });
  }
  return out;
}
