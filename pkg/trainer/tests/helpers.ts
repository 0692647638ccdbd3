import { execFileSync, spawnSync } from "node:child_process";
import { mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { fileURLToPath } from "node:url";
import { NiftiVolume, writeNifti, writeNiftiMask } from "../src/nifti.js";
import { Rng } from "../src/rng.js";

/**
 * Fabricate single-time-point source cases the image toolkit can expand
 * into longitudinal pairs: a noisy volume with one bright ball lesion, a
 * matching lesion mask and a generous white-matter placement mask.
 * Returns the manifest path.
 */
export function writeSourceCases(
  dir: string,
  n: number,
  edge: number,
  seed: number,
): string {
  mkdirSync(dir, { recursive: true });
  const N = edge ** 3;
  const idx = (x: number, y: number, z: number) => x + edge * (y + edge * z);
  const cases = [];
  for (let k = 0; k < n; k++) {
    const rng = new Rng(seed, "source", k);
    const flair = new Float32Array(N);
    for (let i = 0; i < N; i++) flair[i] = 1 + 0.05 * rng.normal();
    const wm = new Float32Array(N);
    for (let z = 2; z < edge - 2; z++) {
      for (let y = 2; y < edge - 2; y++) {
        for (let x = 2; x < edge - 2; x++) wm[idx(x, y, z)] = 1;
      }
    }
    const lesions = new Float32Array(N);
    const cx = 4 + rng.int(edge - 8);
    const cy = 4 + rng.int(edge - 8);
    const cz = 4 + rng.int(edge - 8);
    for (let z = 0; z < edge; z++) {
      for (let y = 0; y < edge; y++) {
        for (let x = 0; x < edge; x++) {
          if ((x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 <= 4) {
            lesions[idx(x, y, z)] = 1;
            flair[idx(x, y, z)] = 1.6 + 0.05 * rng.normal();
          }
        }
      }
    }
    const geom: Omit<NiftiVolume, "data"> = {
      dims: [edge, edge, edge],
      spacing: [1, 1, 1],
      srows: Float32Array.from([1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0]),
    };
    writeNifti(join(dir, `c${k}_flair.nii.gz`), { ...geom, data: flair });
    writeNiftiMask(join(dir, `c${k}_lesions.nii.gz`), { ...geom, data: lesions });
    writeNiftiMask(join(dir, `c${k}_wm.nii.gz`), { ...geom, data: wm });
    cases.push({
      id: `c${k}`,
      paths: {
        flair: `c${k}_flair.nii.gz`,
        lesion_mask: `c${k}_lesions.nii.gz`,
        wm_mask: `c${k}_wm.nii.gz`,
      },
    });
  }
  const manifestPath = join(dir, "manifest.json");
  writeFileSync(manifestPath, JSON.stringify({ cases }, null, 2));
  return manifestPath;
}

/**
 * Synthesis policy that always produces new follow-up lesions: keep all
 * baseline lesions, add 2-4 follow-up-only regions, no degradation.
 */
export function writeSynthPolicy(path: string): string {
  writeFileSync(
    path,
    JSON.stringify({
      policy: {
        fate_probs: { keep_both: 1.0, remove_t1: 0.0, remove_t2: 0.0, remove_both: 0.0 },
        n_generated: [2, 4],
        p_t2_only: 1.0,
        semi_axes_mm: [1.5, 3.0],
        augmentation: null,
        spatial_augmentation: false,
      },
    }),
  );
  return path;
}

/** Run the image toolkit CLI; throws with its stderr on failure. */
export function runPrimary(args: string[]): string {
  return execFileSync("lesionforge", args, { encoding: "utf8" });
}

/** Run this package's CLI out of dist/; returns {status, stdout, stderr}. */
export function runTrainerCli(args: string[]): {
  status: number;
  stdout: string;
  stderr: string;
} {
  const cliPath = fileURLToPath(new URL("../dist/cli.js", import.meta.url));
  const res = spawnSync(process.execPath, [cliPath, ...args], { encoding: "utf8" });
  return { status: res.status ?? -1, stdout: res.stdout, stderr: res.stderr };
}
