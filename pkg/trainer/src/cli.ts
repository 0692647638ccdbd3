#!/usr/bin/env node
/**
 * Command-line driver.
 *
 *   stage1  --manifest M --out state.json [--epochs N --seed S ...]
 *   stage2  --manifest pairs.json --from stage1.json --out state.json ...
 *   stage3  --manifest pairs.json --from stage2-or-1.json --out state.json ...
 *   predict --manifest pairs.json --state s.json [--state ...] --out DIR
 *
 * Training commands write the state next to a .log.json training log
 * (per-epoch losses plus encoder checksums). predict writes one mask
 * and probability map per case and an evaluate-ready manifest, so the
 * primary toolkit can score the output directly.
 */

import { parseArgs } from "node:util";
import { mkdirSync, writeFileSync } from "node:fs";
import { join, relative, resolve } from "node:path";
import { pathToFileURL } from "node:url";
import { ConfigError, DEFAULT_CONFIG } from "./config.js";
import { DataError, loadManifest, loadPairDataset, loadVolumeDataset } from "./data.js";
import { NiftiError } from "./nifti.js";
import { predictEnsemble, writePrediction } from "./predict.js";
import {
  StageState,
  TrainLog,
  TrainOptions,
  buildSiamese,
  buildStage1,
  loadState,
  modelFromState,
  saveState,
  trainStage1,
  trainStage2,
  trainStage3,
} from "./train.js";

class UsageError extends Error {}

function intOpt(v: string | undefined, fallback: number, name: string): number {
  if (v === undefined) return fallback;
  const n = Number(v);
  if (!Number.isInteger(n) || n < 0) throw new UsageError(`--${name} must be a non-negative integer`);
  return n;
}

function parseCommon(argv: string[], extra: Record<string, { type: "string"; multiple?: boolean }> = {}) {
  const { values } = parseArgs({
    args: argv,
    options: {
      manifest: { type: "string" },
      out: { type: "string" },
      epochs: { type: "string" },
      seed: { type: "string" },
      "patch-size": { type: "string" },
      levels: { type: "string" },
      "base-channels": { type: "string" },
      "target-dice": { type: "string" },
      quiet: { type: "boolean" },
      ...extra,
    },
    strict: true,
  });
  if (!values.manifest) throw new UsageError("--manifest is required");
  if (!values.out) throw new UsageError("--out is required");
  return values as Record<string, string | boolean | string[] | undefined> & {
    manifest: string;
    out: string;
  };
}

function trainOptions(values: Record<string, unknown>): TrainOptions {
  const opts: TrainOptions = {
    epochs: intOpt(values.epochs as string | undefined, 200, "epochs"),
    seed: intOpt(values.seed as string | undefined, 0, "seed"),
  };
  if (opts.epochs! < 1) throw new UsageError("--epochs must be at least 1");
  if (values["target-dice"] !== undefined) {
    opts.targetDice = Number(values["target-dice"]);
    if (!Number.isFinite(opts.targetDice)) throw new UsageError("--target-dice must be a number");
  }
  if (!values.quiet) {
    opts.onEpoch = (e) =>
      console.error(`epoch ${e.epoch}: loss=${e.meanLoss.toFixed(4)} dice=${e.trainDice.toFixed(4)}`);
  }
  return opts;
}

function writeOutputs(out: string, state: StageState, log: TrainLog): void {
  saveState(state, out);
  const logPath = out.replace(/\.json$/, "") + ".log.json";
  writeFileSync(logPath, JSON.stringify(log, null, 1));
  console.log(`wrote ${out} and ${logPath} (final loss ${log.finalLoss.toFixed(4)})`);
}

function cmdStage1(argv: string[]): number {
  const values = parseCommon(argv);
  const cfg = {
    levels: intOpt(values.levels as string | undefined, DEFAULT_CONFIG.levels, "levels"),
    baseChannels: intOpt(
      values["base-channels"] as string | undefined,
      DEFAULT_CONFIG.baseChannels,
      "base-channels",
    ),
    patchSize: intOpt(
      values["patch-size"] as string | undefined,
      DEFAULT_CONFIG.patchSize,
      "patch-size",
    ),
  };
  const opts = trainOptions(values);
  const dataset = loadVolumeDataset(loadManifest(values.manifest));
  if (dataset.length === 0) throw new UsageError("manifest lists no cases");
  const model = buildStage1(cfg, opts.seed);
  const { state, log } = trainStage1(model, dataset, opts);
  model.dispose();
  writeOutputs(values.out, state, log);
  return 0;
}

function cmdSiamese(argv: string[], stage: 2 | 3): number {
  const values = parseCommon(argv, { from: { type: "string" } });
  if (!values.from) throw new UsageError("--from is required (source state)");
  const opts = trainOptions(values);
  let source: StageState;
  try {
    source = loadState(values.from as string);
  } catch (err) {
    throw new UsageError(`${values.from}: ${(err as Error).message}`);
  }
  const dataset = loadPairDataset(loadManifest(values.manifest));
  if (dataset.length === 0) throw new UsageError("manifest lists no cases");
  // a stage-1 state seeds a fresh siamese; a siamese state continues as-is
  let model;
  try {
    model =
      source.stage === 1
        ? buildSiamese(source, stage, opts.seed)
        : modelFromState({ ...source, stage, config: { ...source.config, stage } });
  } catch (err) {
    throw new UsageError(`${values.from}: ${(err as Error).message}`);
  }
  const { state, log } = stage === 2 ? trainStage2(model, dataset, opts) : trainStage3(model, dataset, opts);
  model.dispose();
  writeOutputs(values.out, state, log);
  return 0;
}

function cmdPredict(argv: string[]): number {
  const values = parseCommon(argv, { state: { type: "string", multiple: true } });
  const statePaths = (values.state as string[] | undefined) ?? [];
  if (statePaths.length === 0) throw new UsageError("at least one --state is required");
  const members = statePaths.map((p) => {
    try {
      return loadState(p);
    } catch (err) {
      throw new UsageError(`${p}: ${(err as Error).message}`);
    }
  });
  const cases = loadManifest(values.manifest);
  const dataset = loadPairDataset(cases);
  const outDir = resolve(values.out);
  mkdirSync(outDir, { recursive: true });
  const evalCases = [];
  for (const sample of dataset) {
    const pred = predictEnsemble(members, sample);
    const maskPath = join(outDir, `${sample.id}_mask.nii.gz`);
    writePrediction(pred, maskPath, join(outDir, `${sample.id}_probs.nii.gz`));
    const gtPath = cases.find((c) => c.id === sample.id)!.paths.gt;
    evalCases.push({
      id: sample.id,
      paths: { prediction: `${sample.id}_mask.nii.gz`, gt: relative(outDir, gtPath) },
    });
    console.error(`predicted ${sample.id}`);
  }
  const manifestPath = join(outDir, "eval_manifest.json");
  writeFileSync(manifestPath, JSON.stringify({ cases: evalCases }, null, 1));
  console.log(`wrote ${dataset.length} prediction(s) and ${manifestPath}`);
  return 0;
}

const USAGE = `usage: lesionforge-trainer <command> --manifest M --out OUT [options]

commands:
  stage1    train the single-time-point model on (volume, mask) cases
  stage2    pretrain the siamese model on synthetic pairs (--from STATE)
  stage3    fine-tune the siamese model on pairs (--from STATE)
  predict   write ensemble masks/probabilities (--state STATE, repeatable)

options:
  --manifest M        case manifest JSON (required)
  --out PATH          state file (training) or output directory (predict)
  --from STATE        stage-1 or siamese state to start from (stage2/stage3)
  --state STATE       ensemble member state, may be given multiple times
  --epochs N          epoch budget (default 200)
  --seed N            training seed (default 0)
  --target-dice X     stop once training dice reaches X
  --patch-size N --levels N --base-channels N
                      model shape for stage1 (default 16/3/8)
  --quiet             suppress per-epoch progress on stderr`;

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    switch (command) {
      case "stage1":
        return cmdStage1(rest);
      case "stage2":
        return cmdSiamese(rest, 2);
      case "stage3":
        return cmdSiamese(rest, 3);
      case "predict":
        return cmdPredict(rest);
      case "--help":
      case "-h":
      case "help":
        console.log(USAGE);
        return 0;
      default:
        console.error(USAGE);
        return 1;
    }
  } catch (err) {
    if (
      err instanceof UsageError ||
      err instanceof DataError ||
      err instanceof NiftiError ||
      err instanceof ConfigError ||
      String((err as { code?: string }).code).startsWith("ERR_PARSE_ARGS")
    ) {
      console.error(`error: ${(err as Error).message}`);
      return 1;
    }
    throw err;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === pathToFileURL(process.argv[1]).href;
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
