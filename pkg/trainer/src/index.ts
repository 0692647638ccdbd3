export { NetConfig, DEFAULT_CONFIG, ConfigError, validateConfig, levelChannels } from "./config.js";
export { Rng } from "./rng.js";
export { diceLoss, diceLossGrad, hardDice, DICE_EPS } from "./loss.js";
export { UNet3D, upsample2, ConvParams, ParamGroup } from "./unet.js";
export {
  NiftiVolume,
  NiftiError,
  readNifti,
  writeNifti,
  writeNiftiMask,
  sameGeometry,
} from "./nifti.js";
export {
  ManifestCase,
  VolumeSample,
  PairSample,
  DataError,
  loadManifest,
  loadVolumeDataset,
  loadPairDataset,
  extractPatch,
  samplePatchCorner,
  normalize,
  makeBlobDataset,
} from "./data.js";
export {
  StageState,
  TrainLog,
  TrainOptions,
  EpochLog,
  buildStage1,
  buildSiamese,
  modelFromState,
  snapshot,
  groupChecksum,
  trainStage1,
  trainStage2,
  trainStage3,
  meanDatasetDice,
  predictSample,
  predictPairSample,
  saveState,
  loadState,
} from "./train.js";
export {
  EnsemblePrediction,
  predictEnsemble,
  writePrediction,
  loadPair,
} from "./predict.js";
