import { existsSync, mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, describe, expect, it } from "vitest";
import { runTrainerCli, writeSourceCases } from "./helpers.js";
import { loadState } from "../src/train.js";

const tmp = mkdtempSync(join(tmpdir(), "trainer-cli-"));
afterAll(() => rmSync(tmp, { recursive: true, force: true }));

describe("command line", () => {
  it("trains stage 1 from a manifest and writes state plus log", () => {
    const manifest = writeSourceCases(join(tmp, "src"), 2, 8, 3);
    const statePath = join(tmp, "s1.json");
    const res = runTrainerCli([
      "stage1",
      "--manifest", manifest,
      "--out", statePath,
      "--epochs", "2",
      "--levels", "2",
      "--base-channels", "2",
      "--patch-size", "8",
      "--quiet",
    ]);
    // --quiet suppresses progress; tfjs still prints its backend banner
    expect(res.stderr).not.toMatch(/epoch \d+: loss=/);
    expect(res.status).toBe(0);
    expect(existsSync(statePath)).toBe(true);

    const state = loadState(statePath);
    expect(state.stage).toBe(1);
    expect(state.config).toMatchObject({ levels: 2, baseChannels: 2, patchSize: 8 });

    const log = JSON.parse(readFileSync(join(tmp, "s1.log.json"), "utf8"));
    expect(log.learningRate).toBe(1e-4);
    expect(log.beta1).toBe(0.9);
    expect(log.epochs).toHaveLength(2);
    expect(log.encoderChecksumBefore).toMatch(/^[0-9a-f]{64}$/);
    expect(log.encoderChecksumAfter).toMatch(/^[0-9a-f]{64}$/);
    // stage 1 trains the encoder, so the checksum must move
    expect(log.encoderChecksumAfter).not.toBe(log.encoderChecksumBefore);
  });

  it("reports per-epoch progress on stderr unless --quiet", () => {
    const manifest = join(tmp, "src", "manifest.json");
    const res = runTrainerCli([
      "stage1",
      "--manifest", manifest,
      "--out", join(tmp, "s1b.json"),
      "--epochs", "1",
      "--levels", "2",
      "--base-channels", "2",
      "--patch-size", "8",
    ]);
    expect(res.status).toBe(0);
    expect(res.stderr).toMatch(/epoch 0: loss=/);
  });

  it("exits 1 with a clean message on usage errors", () => {
    const manifest = join(tmp, "src", "manifest.json");
    const cases: [string[], RegExp][] = [
      [[], /usage:/],
      [["bogus"], /usage:/],
      [["stage1", "--manifest", manifest], /--out is required/],
      [["stage1", "--out", join(tmp, "x.json")], /--manifest is required/],
      [["stage1", "--manifest", manifest, "--out", join(tmp, "x.json"), "--bogus"], /error:/],
      [["stage1", "--manifest", manifest, "--out", join(tmp, "x.json"), "--epochs", "0"], /--epochs/],
      [
        ["stage1", "--manifest", manifest, "--out", join(tmp, "x.json"), "--patch-size", "18", "--levels", "3"],
        /patchSize/,
      ],
      [["stage2", "--manifest", manifest, "--out", join(tmp, "x.json")], /--from is required/],
      [["predict", "--manifest", manifest, "--out", join(tmp, "x.json")], /--state/],
      [["stage1", "--manifest", join(tmp, "missing.json"), "--out", join(tmp, "x.json")], /error:/],
    ];
    for (const [args, pattern] of cases) {
      const res = runTrainerCli(args);
      expect(res.status, args.join(" ")).toBe(1);
      expect(res.stderr, args.join(" ")).toMatch(pattern);
    }
  });

  it("exits 1 cleanly on an empty manifest and a corrupt state file", () => {
    const empty = join(tmp, "empty.json");
    writeFileSync(empty, JSON.stringify({ cases: [] }));
    const r1 = runTrainerCli(["stage1", "--manifest", empty, "--out", join(tmp, "x.json")]);
    expect(r1.status).toBe(1);
    expect(r1.stderr).toMatch(/no cases/);

    const badState = join(tmp, "bad_state.json");
    writeFileSync(badState, "not json");
    const manifest = join(tmp, "src", "manifest.json");
    const r2 = runTrainerCli([
      "stage2",
      "--manifest", manifest,
      "--out", join(tmp, "x.json"),
      "--from", badState,
    ]);
    expect(r2.status).toBe(1);
    expect(r2.stderr).toMatch(/error: .*bad_state/);
  });
});
