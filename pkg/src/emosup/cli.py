"""Command-line entry point for reproducible corpus generation, training,
supervision demos, metrics, and modality-gap analyses.

Every command takes --out and writes fixed-name outputs there plus a
run.json capturing the fully resolved flags and output hashes, so any
run can be reproduced from its metadata alone. Exit codes: 0 success,
2 usage/validation problems, 3 numerical failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, differencing, prompts, supervision
from .corpus import CorpusManifest, NegativePoolTable, generate_synthetic_corpus
from .emotions import EMOTIONS, EmotionLabel, prompt_for
from .encoders import (WorldConfig, build_synthetic_world, load_precomputed_features,
                       synthetic_suite, write_feature_file)
from .errors import ContractError, GenerationError, NumericalError
from .metrics import FeatureSet, metric_report
from .prompts import AlignmentCheckpoint, TrainConfig
from .supervision import DemoConfig, LambdaConfig, lambda_for_baseline

USAGE_ERROR = 2
NUMERICAL_ERROR = 3


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_run_metadata(out: Path, command: str, flags: dict,
                        outputs: list[Path]) -> None:
    _write_json(out / "run.json",
                {"command": command, "flags": flags,
                 "outputs": {p.name: _sha256(p) for p in outputs}})


def _resolve_flags(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < explicitly passed flags."""
    resolved = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path) as f:
            file_conf = json.load(f)
        if "flags" in file_conf:  # accept a previous run.json directly
            file_conf = file_conf["flags"]
        for key, value in file_conf.items():
            if key in resolved:
                resolved[key] = value
    for key in resolved:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_pools(spec: str) -> NegativePoolTable:
    if spec == "reference":
        return analysis.load_reference_pools()
    if spec == "all":
        return NegativePoolTable.all_others()
    with open(spec) as f:
        return NegativePoolTable.from_names(json.load(f)["pools"])


def _manifest_and_suite(manifest_path: str):
    manifest = CorpusManifest.load(manifest_path)
    world = manifest.rebuild_world()
    return manifest, world, synthetic_suite(world)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_corpus(args) -> int:
    defaults = {"seed": 1, "identities": 4, "per_emotion": 3, "gap": 1.0,
                "noise": 0.05, "d_e": 64, "d_b": 32, "d_tok": 32, "d_latent": 16}
    flags = _resolve_flags(args, defaults)
    out = _out_dir(args)
    config = WorldConfig(n_identities=int(flags["identities"]),
                         d_latent=int(flags["d_latent"]), d_e=int(flags["d_e"]),
                         d_b=int(flags["d_b"]), d_tok=int(flags["d_tok"]),
                         noise_sigma=float(flags["noise"]), gap=float(flags["gap"]))
    world = build_synthetic_world(int(flags["seed"]), config)
    suite = synthetic_suite(world)
    manifest = generate_synthetic_corpus(world, int(flags["per_emotion"]))
    manifest.save(out / "manifest.json")

    feature_dir = out / "features"
    feature_dir.mkdir(exist_ok=True)
    feature_entries = []
    for s in sorted(manifest.samples, key=lambda s: s.id):
        rel = f"features/{s.id}.f32"
        write_feature_file(out / rel, suite.visual_encode(s.image_ref))
        feature_entries.append({"id": s.id, "identity": s.identity,
                                "emotion": s.emotion.name, "feature_file": rel})
    text_refs = {}
    for e in EMOTIONS:
        rel = f"features/text_{e.name}.f32"
        write_feature_file(out / rel, world.text_prototype(e))
        text_refs[e.name] = rel
    _write_json(out / "features.json",
                {"dim": world.config.d_e, "samples": feature_entries,
                 "text_embeddings": text_refs})

    outputs = [out / "manifest.json", out / "features.json"]
    _write_run_metadata(out, "gen-corpus", flags, outputs)
    n_train = len(manifest.in_split("train"))
    n_val = len(manifest.in_split("val"))
    print(f"wrote {len(manifest.samples)} samples "
          f"({n_train} train / {n_val} val) for {flags['identities']} identities")
    return 0


def _train_config_from_flags(flags: dict) -> TrainConfig:
    decay = flags["decay_epochs"]
    if isinstance(decay, str):
        decay = tuple(int(x) for x in decay.split(",") if x)
    return TrainConfig(seed=int(flags["seed"]), epochs=int(flags["epochs"]),
                       batch_size=int(flags["batch_size"]),
                       steps_per_epoch=int(flags["steps_per_epoch"]),
                       lr=float(flags["lr"]), decay_epochs=tuple(decay),
                       decay_factor=float(flags["decay_factor"]),
                       momentum=float(flags["momentum"]),
                       projector_mode=flags["projector_mode"],
                       guider_token_count=int(flags["guider_tokens"]))


TRAIN_DEFAULTS = {"manifest": None, "seed": 1, "epochs": 10, "batch_size": 32,
                  "steps_per_epoch": 40, "lr": 0.1, "decay_epochs": "2,4,6",
                  "decay_factor": 10.0, "momentum": 0.0, "projector_mode": "multi",
                  "guider_tokens": 1, "pools": "reference"}


def _cmd_train(args, objective: str, command: str) -> int:
    flags = _resolve_flags(args, TRAIN_DEFAULTS)
    if not flags["manifest"]:
        raise ContractError("--manifest is required")
    out = _out_dir(args)
    manifest, _, suite = _manifest_and_suite(flags["manifest"])
    pools = _load_pools(flags["pools"])
    config = _train_config_from_flags(flags)
    if objective == "contrastive":
        ckpt, curve = prompts.pretrain_alignment(manifest, pools, suite, config)
    else:
        ckpt, curve = prompts.pretrain_with_difference_objective(
            manifest, pools, suite, config)
    ckpt.save(out / "checkpoint.json")
    curve.save_csv(out / "curve.csv")
    _write_run_metadata(out, command, flags, [out / "checkpoint.json", out / "curve.csv"])
    means = curve.epoch_means()
    accuracy = prompts.retrieval_accuracy(ckpt, manifest, "val", suite)
    print(f"epoch mean loss: first={means[0]:.4f} final={means[-1]:.4f}; "
          f"val retrieval accuracy={accuracy:.3f}")
    print(f"checkpoint hash: {ckpt.content_hash()}")
    return 0


def cmd_pretrain(args) -> int:
    return _cmd_train(args, "contrastive", "pretrain")


def cmd_pretrain_diff_ablation(args) -> int:
    return _cmd_train(args, "difference", "pretrain-diff-ablation")


def cmd_analyze_gap(args) -> int:
    flags = _resolve_flags(args, {"manifest": None, "compare_reference": False})
    if not flags["manifest"]:
        raise ContractError("--manifest is required")
    out = _out_dir(args)
    manifest, world, suite = _manifest_and_suite(flags["manifest"])
    features = {e: np.array([suite.visual_encode(s.image_ref)
                             for s in manifest.samples if s.emotion == e])
                for e in EMOTIONS}
    texts = {e: suite.text_encode(suite.tokenize(prompt_for(e))) for e in EMOTIONS}
    report = analysis.modality_gap_report(features, texts)
    matrix = analysis.cross_modal_matrix(features, texts)
    _write_json(out / "report.json", report.to_json_dict())
    report.to_csv(out / "report.csv")
    _write_json(out / "matrix.json", matrix.to_json_dict())
    matrix.to_csv(out / "matrix.csv")
    reference = analysis.load_reference_gap_table() if flags["compare_reference"] else None
    print(analysis.format_gap_report(report, reference))
    _write_run_metadata(out, "analyze-gap", flags,
                        [out / "report.json", out / "report.csv",
                         out / "matrix.json", out / "matrix.csv"])
    return 0


def cmd_derive_pools(args) -> int:
    flags = _resolve_flags(args, {"k": None, "matrix": "reference"})
    if flags["k"] is None:
        raise ContractError("--k is required")
    out = _out_dir(args)
    if flags["matrix"] == "reference":
        matrix = analysis.load_reference_matrix()
    else:
        with open(flags["matrix"]) as f:
            spec = json.load(f)
        n = len(EMOTIONS)
        values = np.zeros((n, n))
        for i_name, row in spec["rows"].items():
            for j_name, v in row.items():
                values[int(EmotionLabel[i_name]), int(EmotionLabel[j_name])] = v
        counts = np.zeros((n, n), dtype=np.int64)
        per_cell = spec.get("n_per_cell", 0)
        if isinstance(per_cell, dict):
            for name, count in per_cell.items():
                counts[int(EmotionLabel[name])] = int(count)
        else:
            counts[:] = int(per_cell)
        matrix = analysis.CrossModalSimilarityMatrix(values, counts)
    derived = analysis.derive_negative_pools(matrix, int(flags["k"]))
    reference = analysis.load_reference_pools()
    discrepancies = analysis.pool_discrepancies(derived, reference)
    _write_json(out / "pools.json",
                {"k": int(flags["k"]), "pools": derived.to_names(),
                 "reference_pools": reference.to_names(),
                 "discrepancies": {e.name: d for e, d in discrepancies.items()}})
    if discrepancies:
        names = ", ".join(e.name for e in discrepancies)
        print(f"note: derived pools differ from the published reference for: {names}")
    else:
        print("derived pools match the published reference exactly")
    _write_run_metadata(out, "derive-pools", flags, [out / "pools.json"])
    return 0


def _feature_set_from_manifest(path: str, tag: str) -> FeatureSet:
    suite = load_precomputed_features(path)
    with open(path) as f:
        spec = json.load(f)
    ids = sorted(entry["id"] for entry in spec["samples"])
    return FeatureSet(np.array([suite.visual_encode(i) for i in ids]), tag)


def cmd_eval_metrics(args) -> int:
    flags = _resolve_flags(args, {"real": None, "gen": None})
    if not flags["real"] or not flags["gen"]:
        raise ContractError("--real and --gen feature manifests are required")
    out = _out_dir(args)
    real = _feature_set_from_manifest(flags["real"], "real")
    gen = _feature_set_from_manifest(flags["gen"], "gen")
    report = metric_report(real, gen)
    _write_json(out / "report.json", report)
    lse = "n/a" if report["lse_d"] is None else f"{report['lse_d']:.6f}"
    cs = "n/a" if report["csim"] is None else f"{report['csim']:.6f}"
    print(f"fad={report['fad']:.6f} lse_d={lse} csim={cs}")
    _write_run_metadata(out, "eval-metrics", flags, [out / "report.json"])
    return 0


DEMO_DEFAULTS = {"manifest": None, "checkpoint": None, "baseline": "toy",
                 "lam": None, "seed": 0, "steps": 1500, "batch_size": 16,
                 "lr": 0.2, "hidden": "96"}


def _demo_setup(flags):
    if not flags["manifest"] or not flags["checkpoint"]:
        raise ContractError("--manifest and --checkpoint are required")
    manifest, world, suite = _manifest_and_suite(flags["manifest"])
    ckpt = AlignmentCheckpoint.load(flags["checkpoint"])
    hidden = flags["hidden"]
    if isinstance(hidden, str):
        hidden = tuple(int(x) for x in hidden.split(",") if x)
    config = DemoConfig(seed=int(flags["seed"]), steps=int(flags["steps"]),
                        batch_size=int(flags["batch_size"]), lr=float(flags["lr"]),
                        hidden=tuple(hidden))
    return manifest, world, suite, ckpt, config


def cmd_supervise_demo(args) -> int:
    flags = _resolve_flags(args, DEMO_DEFAULTS)
    out = _out_dir(args)
    manifest, world, suite, ckpt, config = _demo_setup(flags)
    lam = (lambda_for_baseline(flags["baseline"]) if flags["lam"] is None
           else LambdaConfig(float(flags["lam"]), flags["baseline"]))
    report = supervision.supervise_demo(manifest, ckpt, lam, suite, config, world=world)
    _write_json(out / "report.json",
                {**report.to_json_dict(), "content_hash": report.content_hash()})
    supervision.write_demo_csv(report.rows(), out / "report.csv")
    base, sup = report.baseline, report.supervised
    print(f"lambda=0: accuracy={base.emotion_accuracy:.3f}; "
          f"lambda={sup.lam}: accuracy={sup.emotion_accuracy:.3f}")
    _write_run_metadata(out, "supervise-demo", flags,
                        [out / "report.json", out / "report.csv"])
    return 0


def cmd_sweep_lambda(args) -> int:
    flags = _resolve_flags(args, {**DEMO_DEFAULTS, "grid": "0.1,0.2,0.4,0.8"})
    out = _out_dir(args)
    manifest, world, suite, ckpt, config = _demo_setup(flags)
    grid_spec = flags["grid"]
    grid = ([float(x) for x in grid_spec.split(",") if x]
            if isinstance(grid_spec, str) else [float(x) for x in grid_spec])
    rows = supervision.sweep_lambda(manifest, ckpt, grid, suite, config, world=world)
    supervision.write_demo_csv(rows, out / "sweep.csv")
    _write_json(out / "sweep.json", {"rows": [r.to_dict() for r in rows]})
    for r in rows:
        print(f"lambda={r.lam}: base_loss={r.base_loss:.4f} "
              f"l2={r.l2_loss:.4f} accuracy={r.emotion_accuracy:.3f}")
    _write_run_metadata(out, "sweep-lambda", flags,
                        [out / "sweep.csv", out / "sweep.json"])
    return 0


def cmd_export_diffs(args) -> int:
    flags = _resolve_flags(args, {"manifest": None, "checkpoint": None,
                                  "include_mismatched": False})
    if not flags["manifest"] or not flags["checkpoint"]:
        raise ContractError("--manifest and --checkpoint are required")
    out = _out_dir(args)
    manifest, _, suite = _manifest_and_suite(flags["manifest"])
    ckpt = AlignmentCheckpoint.load(flags["checkpoint"])
    rows = differencing.export_difference_rows(
        ckpt, manifest, suite, include_mismatched=bool(flags["include_mismatched"]))
    differencing.write_difference_csv(rows, out / "diffs.csv")
    print(f"exported {len(rows)} difference rows")
    _write_run_metadata(out, "export-diffs", flags, [out / "diffs.csv"])
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emosup",
        description="cross-modal emotional supervision toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="JSON config file (flags override it)")
        return p

    p = add("gen-corpus", cmd_gen_corpus, "generate a synthetic corpus + features")
    p.add_argument("--seed", type=int)
    p.add_argument("--identities", type=int)
    p.add_argument("--per-emotion", dest="per_emotion", type=int)
    p.add_argument("--gap", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--d-e", dest="d_e", type=int)
    p.add_argument("--d-b", dest="d_b", type=int)
    p.add_argument("--d-tok", dest="d_tok", type=int)
    p.add_argument("--d-latent", dest="d_latent", type=int)

    for name, func, help_ in [
            ("pretrain", cmd_pretrain, "contrastive pre-training"),
            ("pretrain-diff-ablation", cmd_pretrain_diff_ablation,
             "pre-train with the difference objective instead")]:
        p = add(name, func, help_)
        p.add_argument("--manifest")
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--decay-epochs", dest="decay_epochs")
        p.add_argument("--decay-factor", dest="decay_factor", type=float)
        p.add_argument("--momentum", type=float)
        p.add_argument("--projector-mode", dest="projector_mode",
                       choices=["multi", "single_conditional"])
        p.add_argument("--guider-tokens", dest="guider_tokens", type=int)
        p.add_argument("--pools", help="'reference', 'all', or a pools.json path")

    p = add("analyze-gap", cmd_analyze_gap, "modality-gap report on a corpus")
    p.add_argument("--manifest")
    p.add_argument("--compare-reference", dest="compare_reference",
                   action="store_const", const=True)

    p = add("derive-pools", cmd_derive_pools,
            "derive negative pools by top-k exclusion")
    p.add_argument("--k", type=int)
    p.add_argument("--matrix", help="'reference' or a matrix.json path")

    p = add("eval-metrics", cmd_eval_metrics, "fad / lse-d / csim between feature sets")
    p.add_argument("--real")
    p.add_argument("--gen")

    def demo_flags(p):
        p.add_argument("--manifest")
        p.add_argument("--checkpoint")
        p.add_argument("--baseline", choices=sorted(supervision.DEFAULT_LAMBDAS))
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--hidden")

    p = add("supervise-demo", cmd_supervise_demo,
            "train the toy generator with and without the regularizer")
    demo_flags(p)

    p = add("sweep-lambda", cmd_sweep_lambda, "demo runs over a lambda grid")
    demo_flags(p)
    p.add_argument("--grid")

    p = add("export-diffs", cmd_export_diffs,
            "export difference vectors for external 2-D projection")
    p.add_argument("--manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--include-mismatched", dest="include_mismatched",
                   action="store_const", const=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NUMERICAL_ERROR
    except (ContractError, GenerationError, KeyError, OSError,
            json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
