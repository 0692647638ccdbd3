"""Command-line pipeline driver.

Subcommands cover the full workflow: ``augment`` (degrade volumes under a
sampling policy), ``synthesize`` (build longitudinal pairs with known new
lesions), ``evaluate`` (score predictions), ``compare`` (paired
significance test between two evaluation reports) and ``consensus``
(ensemble vote over probability maps).

Exit codes: 0 on success; 1 on usage, manifest or config errors; 2 when
some cases failed (the rest are still processed and an errors.json is
written next to the outputs).

All runs are deterministic for a fixed ``--seed``: every case draws from
its own substream keyed by case id, so neither case order nor ``--jobs``
changes any output byte. Each command records its resolved configuration
and seed alongside its outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .augment import (
    SamplingPolicy,
    apply_plan,
    plan_to_dict,
    policy_from_dict,
    policy_to_dict,
    sample_plan,
)
from .manifest import DatasetManifest, ManifestError
from .metrics import (
    DetectionThresholds,
    consensus,
    evaluate_case,
    round_score,
    wilcoxon_signed_rank,
)
from .nifti import NiftiError, load_binary_mask, load_volume, save_mask, save_volume
from .seeding import case_rng
from .synth import (
    BaselineEditor,
    ExternalEditor,
    SynthesisPolicy,
    pair_provenance,
    synthesize_pair,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CASE_ERRORS = 2

log = logging.getLogger("lesionforge")


class UsageError(Exception):
    """Bad flags, manifest or config; maps to exit code 1."""


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config not found: {p}")
    try:
        payload = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{p}: invalid JSON ({exc})") from exc
    if not isinstance(payload, dict):
        raise UsageError(f"{p}: config must be a JSON object")
    return payload


def _load_manifest(path: str, *roles: str) -> DatasetManifest:
    try:
        manifest = DatasetManifest.load(path)
        if roles:
            manifest.require_roles(*roles)
    except ManifestError as exc:
        raise UsageError(str(exc)) from exc
    return manifest


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _run_cases(cases, worker, jobs: int):
    """Run ``worker(case)`` for every case, isolating failures.

    Returns (results by id, error messages by id). Case work only touches
    per-case outputs, so thread-level parallelism is safe.
    """
    results: dict[str, object] = {}
    errors: dict[str, str] = {}

    def guarded(case):
        try:
            return case.id, worker(case), None
        except Exception as exc:  # noqa: BLE001 - reported per case
            log.error("case %s failed: %s", case.id, exc)
            return case.id, None, f"{type(exc).__name__}: {exc}"

    if jobs > 1 and len(cases) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(guarded, cases))
    else:
        outcomes = [guarded(c) for c in cases]
    for case_id, result, error in outcomes:
        if error is None:
            results[case_id] = result
        else:
            errors[case_id] = error
    return results, errors


def _finish(out_dir: Path, errors: dict[str, str]) -> int:
    if errors:
        _write_json(out_dir / "errors.json", errors)
        print(f"{len(errors)} case(s) failed; see {out_dir / 'errors.json'}",
              file=sys.stderr)
        return EXIT_CASE_ERRORS
    return EXIT_OK


# ---------------------------------------------------------------------------

def cmd_augment(args) -> int:
    manifest = _load_manifest(args.manifest, "flair")
    config = _load_config(args.config)
    try:
        policy = (
            policy_from_dict(config["policy"])
            if "policy" in config
            else SamplingPolicy()
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad augmentation policy: {exc}") from exc
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def worker(case):
        rng = case_rng(args.seed, case.id, "augment")
        volume = load_volume(case.path("flair"))
        plan = sample_plan(policy, rng)
        augmented = apply_plan(volume, plan)
        vol_name = f"{case.id}_aug.nii.gz"
        plan_name = f"{case.id}_plan.json"
        save_volume(augmented, out_dir / vol_name, datatype="float32")
        _write_json(out_dir / plan_name, plan_to_dict(plan))
        return {"id": case.id, "output": vol_name, "plan": plan_name}

    results, errors = _run_cases(manifest.cases, worker, args.jobs)
    _write_json(
        out_dir / "run_config.json",
        {
            "command": "augment",
            "seed": args.seed,
            "policy": policy_to_dict(policy),
            "cases": [results[i] for i in sorted(results)],
        },
    )
    return _finish(out_dir, errors)


def cmd_synthesize(args) -> int:
    manifest = _load_manifest(args.manifest, "flair", "lesion_mask")
    config = _load_config(args.config)
    editor_cmd = config.get("editor", "baseline")
    try:
        policy = (
            SynthesisPolicy.from_dict(config["policy"])
            if "policy" in config
            else SynthesisPolicy()
        )
        pairs_per_case = int(config.get("pairs_per_case", 1))
        timeout = float(config.get("editor_timeout", 120.0))
        if editor_cmd not in (None, "", "baseline"):
            ExternalEditor(editor_cmd, timeout=timeout)  # validate up front
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad synthesis config: {exc}") from exc
    if pairs_per_case < 1:
        raise UsageError(f"pairs_per_case must be >= 1, got {pairs_per_case}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def worker(case):
        volume = load_volume(case.path("flair"))
        lesions = load_binary_mask(case.path("lesion_mask"))
        wm = load_binary_mask(case.path("wm_mask")) if case.has("wm_mask") else None
        atlas = load_volume(case.path("atlas")) if case.has("atlas") else None
        # editors hold no state, so per-case instances keep workers independent
        editor = (
            BaselineEditor() if editor_cmd in (None, "", "baseline")
            else ExternalEditor(editor_cmd, timeout=timeout)
        )
        entries = []
        for k in range(pairs_per_case):
            pair_id = f"{case.id}__p{k:03d}"
            rng = case_rng(args.seed, case.id, "synthesize", str(k))
            pair = synthesize_pair(
                volume, lesions, policy, rng,
                editor=editor, wm_mask=wm, atlas=atlas,
            )
            pair_dir = out_dir / pair_id
            save_volume(pair.t1, pair_dir / "t1.nii.gz", datatype="float32")
            save_volume(pair.t2, pair_dir / "t2.nii.gz", datatype="float32")
            save_mask(pair.new_lesion_mask, pair_dir / "new_lesions.nii.gz")
            provenance = pair_provenance(pair, policy, args.seed)
            provenance.update(
                {"case_id": case.id, "pair_index": k,
                 "source_volume": str(case.path("flair")),
                 "source_lesions": str(case.path("lesion_mask"))}
            )
            _write_json(pair_dir / "provenance.json", provenance)
            entries.append(
                {
                    "id": pair_id,
                    "paths": {
                        "t1": f"{pair_id}/t1.nii.gz",
                        "t2": f"{pair_id}/t2.nii.gz",
                        "gt": f"{pair_id}/new_lesions.nii.gz",
                    },
                }
            )
        return entries

    results, errors = _run_cases(manifest.cases, worker, args.jobs)
    all_entries = [e for i in sorted(results) for e in results[i]]
    _write_json(
        out_dir / "pairs_manifest.json",
        {
            "command": "synthesize",
            "seed": args.seed,
            "policy": policy.to_dict(),
            "pairs_per_case": pairs_per_case,
            "cases": all_entries,
        },
    )
    return _finish(out_dir, errors)


def cmd_evaluate(args) -> int:
    manifest = _load_manifest(args.manifest, "prediction", "gt")
    config = _load_config(args.config)
    try:
        thresholds = (
            DetectionThresholds.from_dict(config["thresholds"])
            if "thresholds" in config
            else DetectionThresholds()
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad thresholds config: {exc}") from exc
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def worker(case):
        pred = load_binary_mask(case.path("prediction"))
        gt = load_binary_mask(case.path("gt"))
        return evaluate_case(pred, gt, thresholds)

    results, errors = _run_cases(manifest.cases, worker, args.jobs)
    case_rows = []
    for case_id in sorted(results):
        report = results[case_id]
        case_rows.append({"id": case_id, **report.to_dict()})

    metric_names = (
        "dice", "lesion_sensitivity", "lesion_ppv", "les_f1", "avg_score"
    )
    summary: dict[str, object] = {"n_cases": len(case_rows)}
    if case_rows:
        means = {
            m: float(np.mean([row[m] for row in case_rows])) for m in metric_names
        }
        summary["mean"] = means
        summary["rounded"] = {m: round_score(v) for m, v in means.items()}

    _write_json(
        out_dir / "report.json",
        {
            "command": "evaluate",
            "config": thresholds.to_dict(),
            "seed": args.seed,
            "cases": case_rows,
            "summary": summary,
        },
    )
    for row in case_rows:
        print(
            f"{row['id']}: dice={row['dice']:.4f} "
            f"sens={row['lesion_sensitivity']:.4f} "
            f"ppv={row['lesion_ppv']:.4f} les_f1={row['les_f1']:.4f} "
            f"avg={row['avg_score']:.4f}"
        )
    if case_rows:
        r = summary["rounded"]
        print(
            f"mean ({len(case_rows)} cases): avg={r['avg_score']:.3f} "
            f"dice={r['dice']:.3f} les_f1={r['les_f1']:.3f}"
        )
    return _finish(out_dir, errors)


def cmd_compare(args) -> int:
    def read_report(path: str) -> dict:
        p = Path(path)
        if not p.exists():
            raise UsageError(f"report not found: {p}")
        try:
            payload = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{p}: invalid JSON ({exc})") from exc
        if "cases" not in payload:
            raise UsageError(f"{p}: not an evaluation report (no 'cases')")
        return payload

    rep_a = read_report(args.report_a)
    rep_b = read_report(args.report_b)
    by_id_a = {c["id"]: c for c in rep_a["cases"]}
    by_id_b = {c["id"]: c for c in rep_b["cases"]}
    if set(by_id_a) != set(by_id_b):
        only_a = sorted(set(by_id_a) - set(by_id_b))[:5]
        only_b = sorted(set(by_id_b) - set(by_id_a))[:5]
        raise UsageError(
            "the two reports do not cover the same cases "
            f"(only in A: {only_a}, only in B: {only_b})"
        )
    shared = sorted(by_id_a)
    if not shared:
        raise UsageError("the reports contain no cases")

    metrics_out = {}
    lines = []
    for metric in ("dice", "les_f1", "avg_score"):
        a = [float(by_id_a[i][metric]) for i in shared]
        b = [float(by_id_b[i][metric]) for i in shared]
        stat, p = wilcoxon_signed_rank(a, b)
        significant = p < args.alpha
        metrics_out[metric] = {
            "mean_a": float(np.mean(a)),
            "mean_b": float(np.mean(b)),
            "statistic": stat,
            "p_value": p,
            "significant": bool(significant),
        }
        marker = "*" if significant else ""
        lines.append(
            f"{metric:>10}: A={round_score(float(np.mean(a))):.3f}{marker} "
            f"B={round_score(float(np.mean(b))):.3f} "
            f"W={stat:.1f} p={p:.4g}"
        )

    payload = {
        "command": "compare",
        "report_a": str(args.report_a),
        "report_b": str(args.report_b),
        "alpha": args.alpha,
        "n_cases": len(shared),
        "case_ids": shared,
        "metrics": metrics_out,
    }
    if args.out:
        _write_json(Path(args.out), payload)
    print(f"paired Wilcoxon over {len(shared)} cases "
          f"(* marks p < {args.alpha:g} in favour of A):")
    for line in lines:
        print(line)
    return EXIT_OK


def cmd_consensus(args) -> int:
    if not args.maps:
        raise UsageError("consensus needs at least one probability map")
    try:
        volumes = [load_volume(p) for p in args.maps]
        voted = consensus(volumes, threshold=args.threshold)
    except (ValueError, OSError, NiftiError) as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_mask(voted, out)
    _write_json(
        out.with_name(out.name + ".run.json"),
        {
            "command": "consensus",
            "threshold": args.threshold,
            "maps": [str(p) for p in args.maps],
        },
    )
    print(f"wrote {out} ({voted.voxel_count} voxels on)")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lesionforge",
        description=__doc__.split("\n\n")[0],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--manifest", required=True, help="dataset manifest JSON/CSV")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=0, help="root random seed")
        p.add_argument(
            "--jobs", type=int, default=os.cpu_count() or 1,
            help="parallel case workers (default: all cores)",
        )
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")

    p_aug = sub.add_parser("augment", help="apply sampled artifact plans to volumes")
    common(p_aug)
    p_aug.set_defaults(func=cmd_augment)

    p_syn = sub.add_parser("synthesize", help="build synthetic longitudinal pairs")
    common(p_syn)
    p_syn.set_defaults(func=cmd_synthesize)

    p_eval = sub.add_parser("evaluate", help="score predictions against ground truth")
    common(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_cmp = sub.add_parser("compare", help="paired significance test of two reports")
    p_cmp.add_argument("report_a", help="evaluation report.json for method A")
    p_cmp.add_argument("report_b", help="evaluation report.json for method B")
    p_cmp.add_argument("--alpha", type=float, default=0.05)
    p_cmp.add_argument("--out", help="write comparison JSON here")
    p_cmp.set_defaults(func=cmd_compare)

    p_con = sub.add_parser("consensus", help="vote an ensemble of probability maps")
    p_con.add_argument("maps", nargs="+", help="probability map NIfTI files")
    p_con.add_argument("--threshold", type=float, default=0.5)
    p_con.add_argument("--out", required=True, help="output mask path")
    p_con.set_defaults(func=cmd_consensus)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "jobs", 1) < 1:
            parser.error("--jobs must be >= 1")
    except SystemExit as exc:  # remap argparse's own exit codes
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
