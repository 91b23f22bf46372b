"""Command-line interface: synthetic data, training, tracking, evaluation,
whitened spectral-angle detection, and the built-in verification suites.

Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 numerical failure.
The ``SPECTRACK_DATA_ROOT`` environment variable resolves relative dataset
paths. Without ``--config`` the desk-scale preset is used.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import (Config, ConfigError, ModelSection, apply_overrides,
                     config_to_dict, load_config)
from .data import DataError, list_sequences, load_sequence, save_sequence, synth_sequence
from .metrics import evaluate, write_result_file
from .model import TrackerModel
from .sam import sam_fit, sam_score_map
from .selftest import run_selftest
from .tracker import NumericalError, Trainer, track_sequence

DATA_ROOT_ENV = "SPECTRACK_DATA_ROOT"


class _Parser(argparse.ArgumentParser):
    """Argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _resolve_data_path(path_str: str) -> Path:
    p = Path(path_str)
    if p.exists() or p.is_absolute():
        return p
    root = os.environ.get(DATA_ROOT_ENV)
    if root and (Path(root) / p).exists():
        return Path(root) / p
    return p


def _load_effective_config(args) -> Config:
    cfg = load_config(args.config) if args.config else Config.desk_scale()
    if getattr(args, "set", None):
        cfg = apply_overrides(cfg, args.set)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    cfg.validate()
    torch.manual_seed(cfg.seed)
    np.random.seed(cfg.seed % 2**32)
    return cfg


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML config file (default: desk-scale preset)")
    p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                   help="override a config entry (repeatable)")
    p.add_argument("--seed", type=int, help="override the global random seed")


def cmd_synth(args) -> int:
    cfg = _load_effective_config(args)
    out = Path(args.out)
    for i in range(args.count):
        synth_cfg = dataclasses.replace(
            cfg.data.synth, seed=cfg.seed + i, name=f"synth_{i:03d}"
        )
        seq = synth_sequence(synth_cfg)
        save_sequence(seq, out / seq.name)
        print(f"wrote {out / seq.name}: {len(seq)} frames, "
              f"{seq.band_count} bands, distractor={synth_cfg.distractor}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_effective_config(args)
    data_dir = _resolve_data_path(args.data)
    sequences = [load_sequence(d) for d in list_sequences(data_dir)]
    bands = sequences[0].band_count
    model = TrackerModel(bands, cfg.model)
    if cfg.model.rgb_checkpoint:
        load_checkpoint(cfg.model.rgb_checkpoint, model, partial=True)
    trainer = Trainer(model, sequences, cfg)
    steps = args.steps if args.steps is not None else cfg.train.steps
    log_path = args.log or (Path(args.out).with_suffix(".log.csv"))
    print(f"training on {len(sequences)} sequence(s), {steps} steps, "
          f"batch {cfg.train.batch_size}, lr {cfg.train.lr}")
    history = trainer.run(steps, log_path=log_path)
    meta = {
        "bands": bands,
        "model": config_to_dict(cfg)["model"],
        "steps": len(history),
    }
    save_checkpoint(args.out, model, trainer.optimizer, meta)
    if history:
        _, parts, total = history[-1]
        print(f"final losses: cls={parts[0]:.4f} loc={parts[1]:.4f} "
              f"saal={parts[2]:.4f} total={total:.4f}")
    print(f"checkpoint written to {args.out}; log at {log_path}")
    return 0


def _model_from_checkpoint(path, cfg: Config) -> TrackerModel:
    probe = TrackerModel(1, cfg.model)  # throwaway to read metadata
    try:
        meta = load_checkpoint(path, probe, partial=True)
    except CheckpointError:
        meta = {}
    bands = meta.get("bands")
    section = ModelSection(**meta["model"]) if "model" in meta else cfg.model
    if bands is None:
        raise CheckpointError(f"checkpoint {path} lacks band metadata")
    model = TrackerModel(int(bands), section)
    load_checkpoint(path, model)
    return model


def cmd_track(args) -> int:
    cfg = _load_effective_config(args)
    model = _model_from_checkpoint(args.checkpoint, cfg)
    data_dir = _resolve_data_path(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seq_dir in list_sequences(data_dir):
        seq = load_sequence(seq_dir)
        boxes, _ = track_sequence(model, seq, cfg)
        write_result_file(out / f"{seq.name}.txt", boxes)
        print(f"tracked {seq.name}: {len(boxes)} frames -> {out / (seq.name + '.txt')}")
    return 0


def cmd_eval(args) -> int:
    _load_effective_config(args)
    data_dir = _resolve_data_path(args.data)
    report = evaluate(args.results, data_dir, attribute_filter=args.attribute,
                      out_dir=args.out)
    print(f"sequences evaluated: {len(report.per_sequence)}")
    print(f"AUC: {report.overall.auc:.3f}")
    print(f"DP_20: {report.overall.dp20:.3f}")
    if args.out:
        print(f"report files written to {args.out}")
    return 0


def _load_spectrum(path: str) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"target spectrum file not found: {p}")
    if p.suffix == ".npy":
        return np.load(p).reshape(-1)
    text = p.read_text().replace(",", " ").split()
    return np.array([float(v) for v in text])


def cmd_sam_detect(args) -> int:
    cube_path = _resolve_data_path(args.cube)
    if not cube_path.is_file():
        raise DataError(f"cube file not found: {cube_path}")
    cube = np.load(cube_path)
    target = _load_spectrum(args.target)
    model = sam_fit(cube, target)
    scores = sam_score_map(model)
    np.save(args.out, scores)
    i, j = np.unravel_index(int(np.argmax(scores)), scores.shape)
    print(f"cosine map {scores.shape} written to {args.out}")
    print(f"peak score {scores[i, j]:.4f} at (row={i}, col={j})")
    return 0


def cmd_selftest(args) -> int:
    results, ok = run_selftest(
        grad_seeds=args.grad_seeds,
        oracle_instances=args.instances,
        seed=args.seed if args.seed is not None else 0,
    )
    for r in results:
        print(r.line())
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return 0 if ok else 3


def build_parser() -> _Parser:
    parser = _Parser(prog="spectrack",
                     description="Hyperspectral/RGB fusion object tracker")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic sequences")
    _add_common(p)
    p.add_argument("--out", required=True, help="dataset output directory")
    p.add_argument("--count", type=int, default=1, help="number of sequences")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a tracker")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint output path (.npz)")
    p.add_argument("--log", help="training log CSV path")
    p.add_argument("--steps", type=int, help="override train.steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="run the tracker over a dataset")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="results directory")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score result files against ground truth")
    _add_common(p)
    p.add_argument("--results", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="report output directory")
    p.add_argument("--attribute", help="restrict to sequences carrying this tag")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sam-detect", help="whitened spectral-angle detection map")
    p.add_argument("--cube", required=True, help="cube .npy file [H, W, B]")
    p.add_argument("--target", required=True, help="target spectrum (.npy or text)")
    p.add_argument("--out", required=True, help="output cosine map .npy")
    p.set_defaults(func=cmd_sam_detect)

    p = sub.add_parser("selftest", help="run gradient/oracle/invariant suites")
    p.add_argument("--instances", type=int, default=100, help="oracle instances per check")
    p.add_argument("--grad-seeds", type=int, default=5)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
