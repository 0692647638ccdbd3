/**
 * Ensemble inference over longitudinal pairs.
 *
 * Probability maps from each member are averaged and thresholded at
 * 0.5; the result is written in the NIfTI subset the primary toolkit
 * reads, so its evaluate command can score the masks directly.
 */

import { PairSample, normalize } from "./data.js";
import { NiftiVolume, readNifti, sameGeometry, writeNifti, writeNiftiMask } from "./nifti.js";
import { StageState, modelFromState, predictPairSample } from "./train.js";
import { UNet3D } from "./unet.js";

export interface EnsemblePrediction {
  /** mean member probability per voxel, file order */
  probs: Float32Array;
  /** thresholded mask (0/1), file order */
  mask: Float32Array;
  geometry: NiftiVolume;
}

export function loadPair(t1Path: string, t2Path: string): PairSample {
  const t1 = readNifti(t1Path);
  const t2 = readNifti(t2Path);
  if (!sameGeometry(t1, t2)) {
    throw new Error(`time points differ in geometry: ${t1Path} vs ${t2Path}`);
  }
  return {
    id: "pair",
    dims: t1.dims,
    image1: normalize(t1.data),
    image2: normalize(t2.data),
    target: new Float32Array(0),
    positives: new Uint32Array(0),
    geometry: t2,
  };
}

/** Average the member probability maps and threshold. */
export function predictEnsemble(
  members: (StageState | UNet3D)[],
  pair: PairSample,
  threshold = 0.5,
): EnsemblePrediction {
  if (members.length === 0) throw new Error("ensemble needs at least one member");
  const n = pair.dims[0] * pair.dims[1] * pair.dims[2];
  const probs = new Float32Array(n);
  for (const member of members) {
    const model = member instanceof UNet3D ? member : modelFromState(member);
    const p = predictPairSample(model, pair);
    for (let i = 0; i < n; i++) probs[i] += p[i] / members.length;
    if (!(member instanceof UNet3D)) model.dispose();
  }
  const mask = new Float32Array(n);
  for (let i = 0; i < n; i++) mask[i] = probs[i] >= threshold ? 1 : 0;
  return { probs, mask, geometry: pair.geometry };
}

export function writePrediction(
  pred: EnsemblePrediction,
  maskPath: string,
  probsPath?: string,
): void {
  writeNiftiMask(maskPath, { ...pred.geometry, data: pred.mask });
  if (probsPath) {
    writeNifti(probsPath, { ...pred.geometry, data: pred.probs });
  }
}
