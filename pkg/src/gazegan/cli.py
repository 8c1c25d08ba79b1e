"""``gazegan`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import anim, blinkcodec, cgan, dataio, evaluation
from . import checkpoint as ckpt_io
from .config import ConfigError, RunConfig, describe, load_config
from .dataio import BIN_NAMES, DIMENSIONS, WINDOW, LabelMode

log = logging.getLogger("gazegan")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# artifact helpers


def _out(cfg: RunConfig, *parts) -> Path:
    p = Path(cfg.output_dir).joinpath(*parts)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _dir(cfg: RunConfig, *parts) -> Path:
    p = Path(cfg.output_dir).joinpath(*parts)
    p.mkdir(parents=True, exist_ok=True)
    return p


def write_manifest(cfg: RunConfig, command: str, artifacts: list[Path], extra=None) -> Path:
    """Config hash, seed and SHA-256 of every artifact the command wrote."""
    root = Path(cfg.output_dir)
    manifest = {
        "command": command,
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "artifacts": {
            str(p.relative_to(root)): ckpt_io.file_hash(p) for p in sorted(set(artifacts))
        },
    }
    if extra:
        manifest.update(extra)
    path = _out(cfg, f"manifest_{command.replace('-', '_')}.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def write_window_csv(path: Path, window: np.ndarray) -> Path:
    rows = [[f"{k / dataio.SAMPLE_RATE:.17g}", *(f"{v:.17g}" for v in r[:3]), str(int(r[3]))]
            for k, r in enumerate(window)]
    return _write_csv(path, ["t", "gaze_x", "gaze_y", "pupil", "blink"], rows)


def read_window_csv(path) -> np.ndarray:
    return dataio.samples_to_array(dataio.parse_recording(path))


def _load_split(cfg: RunConfig, name: str) -> dataio.WindowSet:
    path = Path(cfg.output_dir) / f"{name}.npz"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run `gazegan prepare` first")
    return dataio.WindowSet.load(path)


def _normalized(ws: dataio.WindowSet, stats) -> np.ndarray:
    return dataio.normalize(ws.frames, stats)


def _train_config(cfg: RunConfig) -> cgan.TrainConfig:
    return cgan.TrainConfig(
        batch_size=cfg.batch_size, lr_g=cfg.lr_g, lr_d=cfg.lr_d, beta1=cfg.beta1,
        beta2=cfg.beta2, epochs=cfg.epochs, seed=cfg.seed, mode=cfg.mode,
        latent_dim=cfg.latent_dim, embed_dim=cfg.embed_dim, g_channels=cfg.g_tuple,
        d_channels=cfg.d_tuple, g_loss_form=cfg.g_loss_form, fake_labels=cfg.fake_labels,
        checkpoint_every=cfg.checkpoint_every or cfg.epochs,
    )


def _class_name(mode: LabelMode, index: int) -> str:
    if mode.kind == "single_dim":
        return f"{mode.dim}{index}"
    return "".join(f"{d}{b}" for d, b in zip(DIMENSIONS, dataio.decode_label(index).bins))


# commands


def cmd_prepare(cfg: RunConfig, args) -> int:
    data_dir = Path(cfg.data_dir)
    paths = sorted(data_dir.glob("*.csv"))
    if not paths:
        raise FileNotFoundError(f"no recording CSVs in {data_dir}")
    profiles = dataio.parse_personality(cfg.personality_file)
    recordings = {p.stem: dataio.samples_to_array(dataio.parse_recording(p, p.stem))
                  for p in paths}
    windows, report = dataio.build_windows(recordings, profiles, cfg.label_mode,
                                           cfg.window_stride)
    if not windows:
        raise ValueError("no window passed the quality test")
    train, test = dataio.split_dataset(windows, cfg.test_fraction, cfg.seed)
    stats = dataio.compute_stats(w.frames for w in train)
    artifacts = []
    for name, part in (("train", train), ("test", test)):
        path = _out(cfg, f"{name}.npz")
        dataio.WindowSet.from_windows(part).save(path)
        artifacts.append(path)
    stats_path = _out(cfg, "stats.txt")
    dataio.save_stats(stats, stats_path)
    train_set = dataio.WindowSet.from_windows(train)
    summary = {
        "windows_total": report.total_windows,
        "windows_rejected": report.rejected,
        "windows_kept": len(windows),
        "train_windows": len(train),
        "test_windows": len(test),
        "train_participants": sorted({w.participant_id for w in train}),
        "test_participants": sorted({w.participant_id for w in test}),
        "seen_classes": sorted(int(c) for c in np.unique(train_set.labels)),
        "pupil_mean": float(train_set.frames[:, :, dataio.PUPIL].mean()),
        "per_participant": {k: {"windows": v[0], "rejected": v[1]}
                            for k, v in report.per_participant.items()},
    }
    summary_path = _out(cfg, "prepare_summary.json")
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_manifest(cfg, "prepare", artifacts + [stats_path, summary_path])
    print(f"windows: {report.total_windows} total, {report.rejected} rejected, "
          f"{len(train)} train / {len(test)} test")
    return EXIT_OK


def cmd_train_ae(cfg: RunConfig, args) -> int:
    train = _load_split(cfg, "train")
    blinks = train.frames[:, :, dataio.BLINK]
    codec = blinkcodec.train_autoencoder(blinks, blinkcodec.CodecConfig(
        cfg.codec_latent_dim, cfg.codec_hidden, cfg.codec_epochs, 64, cfg.codec_lr, cfg.seed))
    path = _out(cfg, "codec.ggan")
    blinkcodec.save_codec(codec, path)
    curve = _write_csv(_out(cfg, "codec_history.csv"), ["epoch", "loss", "accuracy"],
                       [[h["epoch"], f"{h['loss']:.17g}", f"{h['accuracy']:.17g}"]
                        for h in codec.history])
    write_manifest(cfg, "train-ae", [path, curve])
    print(f"codec reconstruction accuracy {codec.history[-1]['accuracy']:.4f}")
    return EXIT_OK


def cmd_train_gan(cfg: RunConfig, args) -> int:
    train = _load_split(cfg, "train")
    stats = dataio.load_stats(_out(cfg, "stats.txt"))
    codec = blinkcodec.load_codec(_out(cfg, "codec.ggan"))
    ckpt_dir = _dir(cfg, "gan")
    state = None
    if args.resume:
        state, _ = cgan.load_state(ckpt_dir, codec)
        log.info("resuming from epoch %d", state.epoch)
    state = cgan.train_gan(_normalized(train, stats), train.labels, codec,
                           _train_config(cfg), ckpt_dir, state)
    hashes = cgan.save_state(state, _train_config(cfg), ckpt_dir)
    log_path = _write_csv(_out(cfg, "gan_log.csv"), ["epoch", "steps", "d_loss", "g_loss"],
                          [[e["epoch"], e["steps"], f"{e['d_loss']:.17g}", f"{e['g_loss']:.17g}"]
                           for e in state.log])
    write_manifest(cfg, "train-gan",
                   [ckpt_dir / "generator.ggan", ckpt_dir / "discriminator.ggan", log_path],
                   {"checkpoint_hashes": hashes})
    last = state.log[-1]
    print(f"epoch {last['epoch']}: d_loss {last['d_loss']:.4f} g_loss {last['g_loss']:.4f}")
    return EXIT_OK


def _load_generator(cfg: RunConfig):
    g, meta = cgan.load_generator(_out(cfg, "gan", "generator.ggan"))
    codec = blinkcodec.load_codec(_out(cfg, "codec.ggan"))
    stats = dataio.load_stats(_out(cfg, "stats.txt"))
    return g, meta, codec, stats


def cmd_synth(cfg: RunConfig, args) -> int:
    mode = cfg.label_mode
    if (args.class_spec is None) == (args.class_index is None):
        raise UsageError("synth: give exactly one of --class or --class-index")
    try:
        label = (dataio.parse_class_spec(args.class_spec, mode) if args.class_spec is not None
                 else dataio.ClassLabel(mode, args.class_index))
    except ValueError as exc:
        raise UsageError(f"synth: {exc}") from None
    g, meta, codec, stats = _load_generator(cfg)
    rng = np.random.default_rng([cfg.seed, label.index])
    windows = cgan.synthesize_batch(args.n, label, g, codec, stats, rng)
    name = _class_name(mode, label.index)
    artifacts = [write_window_csv(_out(cfg, "synth", name, f"window_{i:04d}.csv"), w)
                 for i, w in enumerate(windows)]
    seen = label.index in meta["seen_classes"]
    write_manifest(cfg, "synth", artifacts,
                   {"label_index": label.index, "class": name, "n": args.n, "seen": seen})
    print(f"label index {label.index} ({name}{'' if seen else ', unseen in training'}): "
          f"{len(windows)} windows -> {Path(cfg.output_dir) / 'synth' / name}")
    return EXIT_OK


def _per_bin_groups(mode: LabelMode, classes) -> list[tuple[str, str, list[int]]]:
    """(dimension, bin name, class indices) for every curve to emit."""
    if mode.kind == "single_dim":
        return [(mode.dim, BIN_NAMES[b], [b]) for b in range(3)]
    groups = []
    for d in DIMENSIONS:
        for b in range(3):
            members = [c for c in classes if dataio.decode_label(c).bin(d) == b]
            if members:
                groups.append((d, BIN_NAMES[b], members))
    return groups


def cmd_eval(cfg: RunConfig, args) -> int:
    train = _load_split(cfg, "train")
    test = _load_split(cfg, "test")
    g, meta, codec, stats = _load_generator(cfg)
    mode = cfg.label_mode
    clf = evaluation.train_classifier(
        _normalized(train, stats), train.labels,
        evaluation.ClassifierConfig(cfg.classifier_tuple, cfg.classifier_epochs, 64,
                                    cfg.classifier_lr, 0.2, cfg.seed))
    clf_path = _out(cfg, "eval", "classifier.ggan")
    evaluation.save_classifier(clf, clf_path, str(mode))
    classes = [int(c) for c in meta["seen_classes"]]
    synth = {}
    for c in classes:
        rng = np.random.default_rng([cfg.seed, 7919, c])
        synth[c] = cgan.synthesize_batch(cfg.eval_samples, c, g, codec, stats, rng)
    all_synth = np.concatenate([synth[c] for c in classes])
    rows = [["real_test", len(test),
             f"{evaluation.inception_score(clf, _normalized(test, stats)):.17g}"
             if len(test) else "nan"],
            ["synthetic", len(all_synth),
             f"{evaluation.inception_score(clf, dataio.normalize(all_synth, stats)):.17g}"]]
    score_path = _write_csv(_out(cfg, "eval", "inception.csv"), ["data", "n", "inception_score"],
                            rows)
    curves = []
    for dim, bin_name, members in _per_bin_groups(mode, classes):
        group = np.concatenate([synth[c] for c in members])
        curves.append(evaluation.average_trajectory(group, f"{dim}_{bin_name}"))
        curves.append(evaluation.average_pupil(group, f"{dim}_{bin_name}"))
    plots = evaluation.emit_plot_data(curves, _dir(cfg, "eval", "plots"))
    write_manifest(cfg, "eval", [clf_path, score_path, *plots],
                   {"classifier_heldout_accuracy": clf.heldout_accuracy})
    print(f"classifier held-out accuracy {clf.heldout_accuracy:.4f}")
    for name, n, score in rows:
        print(f"inception score ({name}, n={n}): {score}")
    return EXIT_OK


def cmd_export_anim(cfg: RunConfig, args) -> int:
    inputs = [Path(p) for p in args.inputs] or sorted(
        (Path(cfg.output_dir) / "synth").glob("*/window_*.csv"))
    if not inputs:
        raise FileNotFoundError("no window CSVs to export; run `gazegan synth` first")
    baseline = cfg.baseline_mm
    if baseline <= 0:
        summary = json.loads((Path(cfg.output_dir) / "prepare_summary.json").read_text())
        baseline = summary["pupil_mean"]
    rig = anim.EyeRig((cfg.eye_x, cfg.eye_y, cfg.eye_z), cfg.rig_distance, cfg.h_fov, cfg.v_fov)
    lid = anim.EyelidMap(cfg.eyelid_slope, cfg.eyelid_intercept)
    outputs = []
    for path in inputs:
        window = read_window_csv(path)
        if window.shape != (WINDOW, 4):
            raise ValueError(f"{path}: expected {WINDOW} frames, got {len(window)}")
        rel = f"{path.parent.name}_{path.stem}.anim"
        outputs.append(anim.export_animation(window, rig, baseline, _out(cfg, "anim", rel), lid))
    write_manifest(cfg, "export-anim", outputs, {"baseline_mm": baseline})
    print(f"wrote {len(outputs)} animation file(s) to {Path(cfg.output_dir) / 'anim'}")
    return EXIT_OK


def cmd_show_config(cfg, args) -> int:
    sys.stdout.write(describe())
    return EXIT_OK


COMMANDS = {
    "prepare": (cmd_prepare, "ingest recordings, build quality-filtered windows and stats"),
    "train-ae": (cmd_train_ae, "pre-train the blink autoencoder"),
    "train-gan": (cmd_train_gan, "train the conditional GAN"),
    "synth": (cmd_synth, "synthesize windows for one personality class"),
    "eval": (cmd_eval, "classifier, inception scores and average-curve plot data"),
    "export-anim": (cmd_export_anim, "convert synthesized windows to animation files"),
    "show-config": (cmd_show_config, "print every config key with its default"),
}


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="gazegan", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", default=False,
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text, formatter_class=fmt)
        if name != "show-config":
            p.add_argument("--config", required=True, help="run configuration file")
        if name == "train-gan":
            p.add_argument("--resume", action="store_true", default=False,
                           help="continue from the checkpoints in <output_dir>/gan")
        if name == "synth":
            p.add_argument("--class", dest="class_spec", default=None,
                           help="named bins, e.g. O=2,C=1,E=0,A=1,N=2 (or E=2 in single_dim)")
            p.add_argument("--class-index", type=int, default=None, help="raw class index")
            p.add_argument("--n", type=int, default=1, help="number of windows")
        if name == "export-anim":
            p.add_argument("inputs", nargs="*", default=[],
                           help="window CSVs (default: everything under <output_dir>/synth)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args.config) if args.command != "show-config" else None
        return COMMANDS[args.command][0](cfg, args)
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except (UsageError, ConfigError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except cgan.TrainingDivergedError as exc:
        print(f"training diverged: {exc}; diagnostic checkpoint in {exc.checkpoint_dir}",
              file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError, ckpt_io.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
