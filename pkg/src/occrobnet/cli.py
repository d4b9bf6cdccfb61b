"""``occrobnet`` command line: generate | train | eval | ablate | gradcheck."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint as ckptmod
from . import rng as rngmod
from . import synthdata as sd
from .config import RunConfig, load_config
from .errors import ConfigError, DatasetFormatError, OccRobNetError
from .evaluation import evaluate_model
from .gradcheck import format_report, run_gradcheck
from .metrics import EvalReport, align_scale_translation, joint_errors, procrustes_align
from .model import OccRobNet, breakdown_row
from .plotting import plot_ablation, plot_loss_curve, plot_pck
from .training import LOSS_LOG_HEADER, schedule_hash, train

log = logging.getLogger("occrobnet")

EXIT_OK, EXIT_CONTRACT, EXIT_IO = 0, 1, 2

ABLATION_VARIANTS = (
    ("w/ CIET", True, False),
    ("w/ sigmoid att.", False, True),
    ("w/ CIET & sigmoid att.", True, True),
)

REPORT_COLUMNS = ("mpjpe_single", "mpjpe_two", "mpjpe_all", "mrrpe", "joint_error_st", "auc_st",
                  "joint_error_pa", "auc_pa", "mssd", "identity_accuracy", "heatmap_peak_accuracy",
                  "n_scenes")


class IncompatibleCheckpointError(ConfigError):
    """Checkpoint was trained with a different model configuration."""


# ---------------------------------------------------------------------------
# shared plumbing


def resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    return config


def default_train_set(config: RunConfig) -> list[sd.Scene]:
    return sd.generate_dataset(config.seed, config.n_train, config.occlusion_level, config.two_hand_fraction)


def default_eval_set(config: RunConfig) -> list[sd.Scene]:
    return sd.generate_dataset(rngmod.derive_seed(config.seed, rngmod.SCENE, 1), config.n_eval,
                               config.occlusion_level, config.two_hand_fraction)


def _scenes(path, fallback):
    if path:
        return sd.read_dataset(path)[0]
    return fallback()


def _out_dir(path: str | None, default: str) -> Path:
    out = Path(path or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def check_compatible(config: RunConfig, stored: RunConfig) -> None:
    want, have = config.model_signature(), stored.model_signature()
    diff = {k: (have[k], want[k]) for k in want if want[k] != have[k]}
    if diff:
        detail = ", ".join(f"{k}: checkpoint {a!r} vs config {b!r}" for k, (a, b) in sorted(diff.items()))
        raise IncompatibleCheckpointError(f"checkpoint incompatible with config ({detail})")


def read_loss_log(path: Path) -> list[dict]:
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "iteration" else float(v)) for k, v in r.items()} for r in rows]


def per_joint_errors(preds, scenes) -> dict[str, np.ndarray]:
    st, pa = [], []
    for pred, scene in zip(preds, scenes):
        gt = scene.root_relative()
        for h in np.nonzero(scene.hand_present)[0]:
            st.append(joint_errors(align_scale_translation(pred.joints[h], gt[h]), gt[h]))
            pa.append(joint_errors(procrustes_align(pred.joints[h], gt[h]), gt[h]))
    empty = np.zeros(0)
    return {"scale + translation": np.concatenate(st) if st else empty,
            "Procrustes": np.concatenate(pa) if pa else empty}


def report_row(report: EvalReport) -> list:
    d = report.as_dict()
    return [d[c] for c in REPORT_COLUMNS]


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    config = resolve_config(args)
    n = config.n_train if args.count is None else args.count
    if n < 0:
        raise ConfigError("scene count must be non-negative")
    scenes = sd.generate_dataset(config.seed, n, config.occlusion_level, config.two_hand_fraction)
    out = Path(args.out or "dataset.ocrb")
    out.parent.mkdir(parents=True, exist_ok=True)
    sd.write_dataset(out, scenes, config.seed)
    if args.json:
        sd.write_dataset_json(out.with_suffix(".json"), scenes, config.seed)
    two = sum(s.two_hand for s in scenes)
    occ = float(np.mean([s.occlusion_ratio for s in scenes])) if scenes else 0.0
    print(f"wrote {n} scenes to {out} (seed {config.seed}; {two} two-hand, {n - two} single-hand; "
          f"mean occlusion {occ:.3f})")
    return EXIT_OK


def cmd_train(args) -> int:
    config = resolve_config(args)
    out = _out_dir(args.out, "run")
    model, optimizer, start = None, None, 0
    if args.checkpoint:
        stored = ckptmod.load(args.checkpoint)
        if args.config or args.seed is not None:
            check_compatible(config, stored.config)
        else:
            config = stored.config
        model, optimizer = ckptmod.restore(stored)
        model.config = config
        optimizer.step_size = config.step_size
        start = stored.iteration
    model = model or OccRobNet(config)
    scenes = _scenes(args.dataset, lambda: default_train_set(config))
    rows = []
    started = time.time()

    def on_step(it, breakdown):
        rows.append(breakdown_row(it, breakdown))

    end = config.iterations if args.stop_at is None else max(start, min(args.stop_at, config.iterations))
    optimizer, _ = train(model, scenes, config, optimizer, start=start, on_step=on_step, stop=end)
    ckpt_path = out / "checkpoint.ocrc"
    ckptmod.save(ckptmod.capture(model, optimizer, end), ckpt_path)
    write_csv(out / "loss_log.csv", LOSS_LOG_HEADER, rows)
    (out / "config.txt").write_text(config.dumps())
    if rows:
        plot_loss_curve(read_loss_log(out / "loss_log.csv"), out / "loss_curve.png")
    first, last = (rows[0][-1], rows[-1][-1]) if rows else (None, None)
    print(f"trained iterations {start}..{end - 1} on {len(scenes)} scenes in "
          f"{time.time() - started:.1f}s; total loss {first} -> {last}; checkpoint {ckpt_path}")
    return EXIT_OK


def _load_for_eval(args) -> tuple[OccRobNet, RunConfig]:
    if not args.checkpoint:
        raise ConfigError("eval needs --checkpoint")
    stored = ckptmod.load(args.checkpoint)
    config = stored.config
    if args.config or args.seed is not None:
        requested = resolve_config(args)
        check_compatible(requested, stored.config)
        config = requested
    model, _ = ckptmod.restore(stored)
    model.config = config
    return model, config


def cmd_eval(args) -> int:
    model, config = _load_for_eval(args)
    scenes = _scenes(args.dataset, lambda: default_eval_set(config))
    if not scenes:
        raise ConfigError("cannot evaluate an empty dataset")
    out = _out_dir(args.out, "eval")
    report, preds = evaluate_model(model, scenes)
    report.extra["config"] = config.to_dict()
    write_csv(out / "report.csv", REPORT_COLUMNS, [report_row(report)])
    write_json(out / "report.json", report.as_dict())
    (out / "config.txt").write_text(config.dumps())
    plot_pck(per_joint_errors(preds, scenes), out / "pck.png", config.auc_max, config.auc_steps)
    print(f"MPJPE single/two/all: {_fmt(report.mpjpe_single)}/{_fmt(report.mpjpe_two)}/"
          f"{report.mpjpe_all:.4f}  MRRPE: {_fmt(report.mrrpe)}  PA joint error: {report.joint_error_pa:.4f}"
          f"  AUC(PA): {report.auc_pa:.4f}  -> {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = resolve_config(args)
    scenes = _scenes(args.dataset, lambda: default_train_set(config))
    eval_scenes = _scenes(args.eval_dataset, lambda: default_eval_set(config))
    if not eval_scenes:
        raise ConfigError("cannot evaluate an empty dataset")
    out = _out_dir(args.out, "ablation")
    digest = schedule_hash(config.seed, config.iterations, len(scenes))
    header = ("variant", "use_ciet", "use_sigmoid_attention", "seed", "iterations", "schedule_hash",
              "final_loss") + REPORT_COLUMNS
    rows, docs = [], []
    for name, ciet, sig in ABLATION_VARIANTS:
        variant = config.replace(use_ciet=ciet, use_sigmoid_attention=sig)
        model = OccRobNet(variant)
        _, history = train(model, scenes, variant)
        report, _ = evaluate_model(model, eval_scenes)
        final = history[-1].total if history else None
        rows.append([name, ciet, sig, variant.seed, variant.iterations, digest, final] + report_row(report))
        docs.append({"variant": name, "use_ciet": ciet, "use_sigmoid_attention": sig,
                     "schedule_hash": digest, "final_loss": final, **report.as_dict()})
        print(f"{name}: PA joint error {report.joint_error_pa:.4f}, AUC(PA) {report.auc_pa:.4f}")
    write_csv(out / "ablation.csv", header, rows)
    write_json(out / "ablation.json", {"config": config.to_dict(), "variants": docs})
    (out / "config.txt").write_text(config.dumps())
    plot_ablation(docs, ("joint_error_st", "joint_error_pa", "mpjpe_all", "mssd"), out / "ablation.png")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = resolve_config(args)
    started = time.time()
    results = run_gradcheck(config, samples=args.samples)
    text = format_report(results)
    print(text, end="")
    worst = max(r.max_rel_error for r in results)
    passed = all(r.passed for r in results)
    print(f"max relative error {worst:.3e} over {len(results)} groups in {time.time() - started:.1f}s: "
          f"{'PASS' if passed else 'FAIL'}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    return EXIT_OK if passed else EXIT_CONTRACT


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="occrobnet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=True, checkpoint=False):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output path (file for generate/gradcheck, directory otherwise)")
        if dataset:
            p.add_argument("--dataset", help="dataset file written by 'generate'")
        if checkpoint:
            p.add_argument("--checkpoint", help="checkpoint file")
        return p

    g = common(sub.add_parser("generate", help="write a synthetic dataset"), dataset=False)
    g.add_argument("--count", type=int, help="number of scenes (default: n_train)")
    g.add_argument("--json", action="store_true", help="also write a JSON mirror")
    g.set_defaults(func=cmd_generate)
    t = common(sub.add_parser("train", help="train and write checkpoint + loss log"), checkpoint=True)
    t.add_argument("--stop-at", type=int, help="halt before this iteration (resume later with --checkpoint)")
    t.set_defaults(func=cmd_train)
    common(sub.add_parser("eval", help="evaluate a checkpoint"), checkpoint=True).set_defaults(func=cmd_eval)
    a = common(sub.add_parser("ablate", help="train and compare the three ablation variants"))
    a.add_argument("--eval-dataset", help="held-out dataset (default: generated from the seed)")
    a.set_defaults(func=cmd_ablate)
    gc = common(sub.add_parser("gradcheck", help="finite-difference gradient audit"), dataset=False)
    gc.add_argument("--samples", type=int, default=4, help="random entries per group")
    gc.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DatasetFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OccRobNetError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
