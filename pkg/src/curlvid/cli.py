"""Batch entry points tying the pipeline together.

One JSON config file drives every command; sections are optional and
unknown fields are rejected. The CURL_SEED environment variable overrides
the config seed. Exit codes: 0 ok, 2 usage error, 3 data/format error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io as _stdio
import json
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np
import torch

from . import io as cio
from .augment import AugmentationPolicy
from .encoder import EncoderConfig, VideoEncoder
from .errors import FormatError, NumericError
from .evaluate import (aggregate_reports, auroc, binarize_eval_labels, confusion_metrics,
                       export_embeddings, patient_kfold)
from .sampling import SamplerConfig, clean_cut_windows, manifest_rows, materialize_clip, sliding_windows
from .synth import SynthConfig, generate_dataset
from .timeline import LabeledClip, dominant_movement_subtype
from .training import TrainConfig, encode_clips, finetune, infer_timeline, pretrain

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


def _dataclass_from(cls, doc: dict, context: str, path=None):
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise FormatError(f"unknown field {sorted(unknown)[0]!r}",
                          path=path, location=f"{context}.{sorted(unknown)[0]}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as e:
        raise FormatError(str(e), path=path, location=context) from e


@dataclass
class PipelineConfig:
    seed: int
    synth: SynthConfig
    sampler: SamplerConfig
    encoder: EncoderConfig
    train: TrainConfig
    view_a_ops: list[str]
    view_b_ops: list[str]

    def policies(self) -> tuple[AugmentationPolicy, AugmentationPolicy]:
        enc = self.encoder
        mk = lambda ops: AugmentationPolicy.from_ops(
            ops, patch_t=enc.patch_t, patch_h=enc.patch_h, patch_w=enc.patch_w)
        return mk(self.view_a_ops), mk(self.view_b_ops)


_SECTIONS = ("seed", "synth", "sampler", "encoder", "train", "augment")
_DEFAULT_OPS = ["rotate", "brightness", "contrast", "noise", "tube_mask"]


def load_config(path=None) -> PipelineConfig:
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text("utf-8"))
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise FormatError(f"invalid JSON: {e.msg}", path=path, location=f"char {e.pos}")
        if not isinstance(doc, dict):
            raise FormatError("config top level must be an object", path=path, location="$")
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise FormatError(f"unknown config section {sorted(unknown)[0]!r}",
                          path=path, location=f"$.{sorted(unknown)[0]}")

    seed = doc.get("seed", 0)
    env_seed = os.environ.get("CURL_SEED")
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError:
            raise UsageError(f"CURL_SEED must be an integer, got {env_seed!r}")

    synth_doc = dict(doc.get("synth", {}))
    synth_doc.setdefault("seed", seed)
    if env_seed is not None:
        synth_doc["seed"] = seed
    train_doc = dict(doc.get("train", {}))
    train_doc.setdefault("seed", seed)
    if env_seed is not None:
        train_doc["seed"] = seed

    aug = dict(doc.get("augment", {}))
    bad = set(aug) - {"view_a", "view_b"}
    if bad:
        raise FormatError(f"unknown field {sorted(bad)[0]!r}", path=path,
                          location=f"augment.{sorted(bad)[0]}")
    return PipelineConfig(
        seed=seed,
        synth=_dataclass_from(SynthConfig, synth_doc, "synth", path),
        sampler=_dataclass_from(SamplerConfig, dict(doc.get("sampler", {})), "sampler", path),
        encoder=_dataclass_from(EncoderConfig, dict(doc.get("encoder", {})), "encoder", path),
        train=_dataclass_from(TrainConfig, train_doc, "train", path),
        view_a_ops=list(aug.get("view_a", _DEFAULT_OPS)),
        view_b_ops=list(aug.get("view_b", _DEFAULT_OPS)),
    )


def discover_recordings(data_dir) -> list[tuple[str, Path, Path]]:
    root = Path(data_dir)
    if not root.is_dir():
        raise UsageError(f"data directory not found: {data_dir}")
    out = []
    for video in sorted(root.glob("*.curlvid")):
        sid = video.stem
        timeline = root / f"{sid}.timeline.json"
        if not timeline.exists():
            raise UsageError(f"missing timeline for recording {sid}: {timeline}")
        out.append((sid, video, timeline))
    if not out:
        raise UsageError(f"no .curlvid recordings in {data_dir}")
    return out


def _load_recording(video_path, timeline_path):
    container = cio.read_video(video_path)
    timeline = cio.read_timeline(timeline_path)
    return container, timeline


def build_clean_cut_clips(recordings, sampler: SamplerConfig, subjects=None):
    clips, labels = [], []
    for sid, video, timeline_path in recordings:
        if subjects is not None and sid not in subjects:
            continue
        container, timeline = _load_recording(video, timeline_path)
        for window, label in clean_cut_windows(timeline, sampler):
            clips.append(materialize_clip(container.frames, container.fps, window,
                                          sampler, source_id=sid))
            labels.append(label)
    return clips, labels


def build_sliding_clips(recordings, sampler: SamplerConfig, subjects=None):
    dataset, meta = [], []
    for sid, video, timeline_path in recordings:
        if subjects is not None and sid not in subjects:
            continue
        container, timeline = _load_recording(video, timeline_path)
        for window, p in sliding_windows(timeline, sampler):
            clip = materialize_clip(container.frames, container.fps, window,
                                    sampler, source_id=sid)
            dataset.append(LabeledClip(clip=clip, p_movement=p))
            meta.append({"recording_id": sid, "start_s": window.start_s,
                         "end_s": window.end_s,
                         "archetype": dominant_movement_subtype(timeline, *window)})
    return dataset, meta


def _check_clip_geometry(sampler: SamplerConfig, enc: EncoderConfig) -> None:
    if sampler.frames_per_clip != enc.input_t:
        raise UsageError(
            f"sampler yields {sampler.frames_per_clip} frames per clip but the "
            f"encoder expects {enc.input_t}; adjust clip_len_s/target_fps or input_t")


def _save_model(path, model: VideoEncoder) -> None:
    cio.save_checkpoint(path, model.config.to_dict(), model.to_arrays())


def _load_model(path) -> VideoEncoder:
    if not Path(path).exists():
        raise UsageError(f"checkpoint not found: {path}")
    config, arrays = cio.load_checkpoint(path)
    return VideoEncoder.from_arrays(EncoderConfig.from_dict(config), arrays)


def _write_log(path, log: list[dict]) -> None:
    cio.atomic_write_text(path, "".join(json.dumps(e) + "\n" for e in log))


def _write_csv(path, rows: list[dict], columns: list[str]) -> None:
    buf = _stdio.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns)
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in columns})
    cio.atomic_write_text(path, buf.getvalue())


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    ids = generate_dataset(cfg.synth, args.out)
    print(f"wrote {len(ids)} recordings to {args.out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config)
    _check_clip_geometry(cfg.sampler, cfg.encoder)
    recordings = discover_recordings(args.data)
    clips, _ = build_clean_cut_clips(recordings, cfg.sampler)
    policy_a, policy_b = cfg.policies()
    model = VideoEncoder(cfg.encoder, seed=cfg.train.seed)
    try:
        model, log = pretrain(clips, model, cfg.train, policy_a, policy_b)
    except ValueError as e:
        raise UsageError(str(e))
    _save_model(args.out, model)
    _write_log(Path(args.out).with_suffix(".log.jsonl"), log)
    print(f"pretrained on {len(clips)} clean-cut clips for {cfg.train.epochs} epochs; "
          f"checkpoint: {args.out}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = load_config(args.config)
    model = _load_model(args.ckpt)
    _check_clip_geometry(cfg.sampler, model.config)
    recordings = discover_recordings(args.data)
    dataset, _ = build_sliding_clips(recordings, cfg.sampler)
    train_cfg = replace(cfg.train, phase="finetune", ft_mode=args.mode)
    try:
        model, log = finetune(model, dataset, train_cfg)
    except ValueError as e:
        raise UsageError(str(e))
    _save_model(args.out, model)
    _write_log(Path(args.out).with_suffix(".log.jsonl"), log)
    print(f"fine-tuned ({args.mode}) on {len(dataset)} sliding-window clips; "
          f"checkpoint: {args.out}")
    return EXIT_OK


def cmd_infer(args) -> int:
    cfg = load_config(args.config)
    model = _load_model(args.ckpt)
    _check_clip_geometry(cfg.sampler, model.config)
    rec_path = Path(args.recording)
    if not rec_path.exists():
        raise UsageError(f"recording not found: {args.recording}")
    container = cio.read_video(rec_path)
    results = infer_timeline(model, container.frames, container.fps, cfg.sampler,
                             source_id=rec_path.stem)
    rows = [{"recording_id": rec_path.stem, "start_s": w.start_s, "end_s": w.end_s,
             "p_movement": p} for w, p in results]
    cio.write_manifest(args.out, rows)
    print(f"wrote {len(rows)} window probabilities to {args.out}")
    return EXIT_OK


def _fold_evaluation(model_path, recordings, cfg: PipelineConfig, folds: int):
    subject_ids = [sid for sid, _, _ in recordings]
    fold_sets = patient_kfold(subject_ids, k=folds, seed=cfg.seed)
    reports = []
    for i, test_subjects in enumerate(fold_sets):
        train_subjects = [s for s in subject_ids if s not in set(test_subjects)]
        model = _load_model(model_path)
        train_set, _ = build_sliding_clips(recordings, cfg.sampler, subjects=set(train_subjects))
        test_set, test_meta = build_sliding_clips(recordings, cfg.sampler,
                                                  subjects=set(test_subjects))
        ft_cfg = replace(cfg.train, phase="finetune")
        model, _ = finetune(model, train_set, ft_cfg)
        with torch.no_grad():
            h = encode_clips(model, [lc.clip for lc in test_set])
            scores = model.classify(h)[:, 1].cpu().numpy()
        p_true = np.array([lc.p_movement for lc in test_set])
        labels, keep = binarize_eval_labels(p_true, threshold=0.5)
        preds = (scores >= 0.5).astype(np.int64)
        arch = np.array([m["archetype"] for m in test_meta])
        report = confusion_metrics(preds[keep], labels[keep], archetypes=arch[keep])
        report.auroc = auroc(scores[keep], labels[keep])
        reports.append((i, test_subjects, report))
    return reports


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    recordings = discover_recordings(args.data)
    if len(recordings) < args.folds:
        raise UsageError(f"{len(recordings)} subjects cannot fill {args.folds} folds")
    model = _load_model(args.ckpt)
    _check_clip_geometry(cfg.sampler, model.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = _fold_evaluation(args.ckpt, recordings, cfg, args.folds)
    rows = []
    for i, subjects, report in reports:
        doc = report.to_dict()
        doc["fold"] = i
        doc["test_subjects"] = subjects
        cio.write_report_json(out / f"fold_{i}.json", doc)
        rows.append({"fold": i, **{k: getattr(report, k) for k in cio.REPORT_METRIC_KEYS}})
    cio.write_report_csv(out / "folds.csv", rows)
    agg = aggregate_reports([r for _, _, r in reports])
    cio.write_report_json(out / "aggregate.json", agg)
    means = {k: (f"{v['mean']:.4f}" if v["mean"] is not None else "n/a")
             for k, v in agg.items()}
    print(f"{args.folds}-fold aggregate: " + ", ".join(f"{k}={v}" for k, v in means.items()))
    return EXIT_OK


def cmd_embed(args) -> int:
    cfg = load_config(args.config)
    model = _load_model(args.ckpt)
    _check_clip_geometry(cfg.sampler, model.config)
    recordings = discover_recordings(args.data)
    dataset, meta = build_sliding_clips(recordings, cfg.sampler)
    ids = [f"{m['recording_id']}@{m['start_s']:.3f}" for m in meta]
    rows = export_embeddings(model, dataset, clip_ids=ids, head=args.head)
    dim = rows[0]["embedding"].shape[0] if rows else 0
    columns = ["clip_id", "p_movement"] + [f"e{i}" for i in range(dim)]
    flat = [{"clip_id": r["clip_id"], "p_movement": r["p_movement"],
             **{f"e{i}": float(v) for i, v in enumerate(r["embedding"])}} for r in rows]
    _write_csv(args.out, flat, columns)
    print(f"wrote {len(rows)} embeddings (dim {dim}) to {args.out}")
    return EXIT_OK


def _probe_auroc(model: VideoEncoder, cfg: PipelineConfig, recordings, train_subjects,
                 test_subjects, ft_mode: str = "linear"):
    """Fine-tune on train subjects, score held-out subjects, return (bacc, auroc)."""
    train_set, _ = build_sliding_clips(recordings, cfg.sampler, subjects=set(train_subjects))
    test_set, _ = build_sliding_clips(recordings, cfg.sampler, subjects=set(test_subjects))
    ft_cfg = replace(cfg.train, phase="finetune", ft_mode=ft_mode)
    model, _ = finetune(model, train_set, ft_cfg)
    with torch.no_grad():
        h = encode_clips(model, [lc.clip for lc in test_set])
        scores = model.classify(h)[:, 1].cpu().numpy()
    p_true = np.array([lc.p_movement for lc in test_set])
    labels, _ = binarize_eval_labels(p_true)
    preds = (scores >= 0.5).astype(np.int64)
    report = confusion_metrics(preds, labels)
    return report.bacc, auroc(scores, labels)


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    _check_clip_geometry(cfg.sampler, cfg.encoder)
    recordings = discover_recordings(args.data)
    subject_ids = [sid for sid, _, _ in recordings]
    if len(subject_ids) < 5:
        raise UsageError(f"ablations need >= 5 subjects, got {len(subject_ids)}")
    folds = patient_kfold(subject_ids, k=5, seed=cfg.seed)
    test_subjects = folds[0]
    train_subjects = [s for s in subject_ids if s not in set(test_subjects)]

    def run_pretrain(train_cfg, policies=None, clip_source="clean_cut"):
        if clip_source == "clean_cut":
            clips, _ = build_clean_cut_clips(recordings, cfg.sampler, subjects=set(train_subjects))
        else:
            labeled, _ = build_sliding_clips(recordings, cfg.sampler, subjects=set(train_subjects))
            clips = [lc.clip for lc in labeled]
        pa, pb = policies if policies is not None else cfg.policies()
        model = VideoEncoder(cfg.encoder, seed=train_cfg.seed)
        model, _ = pretrain(clips, model, train_cfg, pa, pb)
        return model

    rows: list[dict] = []
    out_path = Path(args.out)
    if args.axis == "loss":
        for lam, tag in ((0.0, "spatial_only"), (1.0, "with_temporal")):
            tcfg = replace(cfg.train, lambda_tc=lam)
            model = run_pretrain(tcfg)
            for mode in ("full", "linear"):
                bacc, roc = _probe_auroc(_clone(model), cfg, recordings, train_subjects,
                                         test_subjects, ft_mode=mode)
                rows.append({"losses": tag, "mode": mode, "bacc": bacc, "auroc": roc})
        columns = ["losses", "mode", "bacc", "auroc"]
    elif args.axis == "sampling":
        for source in ("clean_cut", "sliding"):
            model = run_pretrain(cfg.train, clip_source=source)
            bacc, roc = _probe_auroc(model, cfg, recordings, train_subjects, test_subjects)
            rows.append({"pretrain_sampling": source, "bacc": bacc, "auroc": roc})
        columns = ["pretrain_sampling", "bacc", "auroc"]
    elif args.axis == "augmentation":
        ops = ["rotate", "brightness", "contrast", "noise", "blur",
               "tube_mask", "frame_mask", "random_mask"]
        enc = cfg.encoder
        for op in ops:
            pa = AugmentationPolicy.from_ops([op], patch_t=enc.patch_t,
                                             patch_h=enc.patch_h, patch_w=enc.patch_w)
            pb = AugmentationPolicy.from_ops([], patch_t=enc.patch_t,
                                             patch_h=enc.patch_h, patch_w=enc.patch_w)
            model = run_pretrain(cfg.train, policies=(pa, pb))
            bacc, roc = _probe_auroc(model, cfg, recordings, train_subjects, test_subjects)
            rows.append({"augmentation": op, "bacc": bacc, "auroc": roc})
        columns = ["augmentation", "bacc", "auroc"]
    elif args.axis == "mode":
        model = run_pretrain(cfg.train)
        for mode in ("linear", "full"):
            bacc, roc = _probe_auroc(_clone(model), cfg, recordings, train_subjects,
                                     test_subjects, ft_mode=mode)
            rows.append({"mode": mode, "bacc": bacc, "auroc": roc})
        columns = ["mode", "bacc", "auroc"]
    else:
        raise UsageError(f"unknown ablation axis {args.axis!r}")
    _write_csv(out_path, rows, columns)
    print(f"wrote {len(rows)} ablation rows to {out_path}")
    return EXIT_OK


def _clone(model: VideoEncoder) -> VideoEncoder:
    return VideoEncoder.from_arrays(model.config, model.to_arrays())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="curlvid",
                                     description="movement-interval detection pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="self-supervised pretraining on clean-cut clips")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="train the classifier on sliding-window clips")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["linear", "full"], default="linear")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("infer", help="sliding-window probability timeline for one recording")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--recording", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="subject-wise cross-validated evaluation")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("embed", help="export clip embeddings as CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--head", choices=["encoder", "spatial", "temporal"], default="encoder")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("ablate", help="comparison tables over one design axis")
    p.add_argument("--axis", choices=["augmentation", "loss", "sampling", "mode"],
                   required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        if e.diagnostics:
            print(json.dumps(e.diagnostics, indent=2), file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
