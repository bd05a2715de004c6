"""Command-line entry point: profile, detect, attack, evaluate, visualize, synth."""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import synth
from .ascent import AscentConfig
from .attacks import input_box, noise_attack_set, patch_attack_set
from .audio import MfccConfig, ingest_audio, read_wav, scale_features, waveform_features, write_wav
from .bundle import (MANIFEST, SampleSet, denormalize_image, ingest_images, load_bundle,
                     load_sampleset, normalize_image, save_sampleset)
from .cam import CropConfig
from .detector import (DetectorConfig, Thresholds, default_workers, detect)
from .errors import EmptySetError, SelfVerifyError
from .evaluate import parse_grid, summarize
from .features import analyze
from .imageio import read_pnm, resize_bilinear, write_pnm
from .introspection import maximize_last_conv
from .profiler import (ProfileConfig, build_profiles, load_profiles, profile_distance_report,
                       save_profiles, summary_table)
from .reports import read_reports, save_report, write_reports
from .spectral import DEFAULT_SIZE

logger = logging.getLogger("selfverify")

BUNDLED_MODELS = ("desk_image", "desk_audio")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors exit with 1, like every other failure
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- artifact resolution ------------------------------------------------------

def resolve_model(name):
    """A bundle directory, or the name of a bundled desk model."""
    path = Path(name)
    if path.is_dir():
        return load_bundle(path)
    key = name.replace("-", "_")
    if key in BUNDLED_MODELS:
        return load_bundle(Path(str(resources.files("selfverify") / "models" / key)))
    raise UsageError(f"no model bundle at {name!r} (bundled: {', '.join(BUNDLED_MODELS)})")


def modality_of(net):
    return net.spec.meta.get("modality", "image")


def _is_sampleset(path):
    manifest = Path(path) / MANIFEST
    if not manifest.is_file():
        return False
    try:
        with open(manifest, encoding="utf-8") as fh:
            return json.load(fh).get("kind") == "sampleset"
    except (OSError, json.JSONDecodeError):
        return False


def _single_file(path, net):
    meta = net.spec.meta
    if modality_of(net) == "image":
        img = read_pnm(path)
        c, h, w = net.input_shape
        if img.shape[0] != c:
            img = np.repeat(img, c, axis=0) if img.shape[0] == 1 else img.mean(axis=0, keepdims=True)
        item = normalize_image(resize_bilinear(img, (h, w)), meta.get("normalization"))
    else:
        wav, rate = read_wav(path)
        item = waveform_features(wav, meta, rate)
    return SampleSet(item[None], modality_of(net), ids=[Path(path).name])


def load_inputs(path, net) -> SampleSet:
    """A SampleSet container, a directory of raw files, or one raw file."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{path}: no such file or directory")
    if path.is_file():
        samples = _single_file(path, net)
    elif _is_sampleset(path):
        samples = load_sampleset(path)
    elif modality_of(net) == "image":
        samples = ingest_images(path, net.input_shape, net.spec.meta.get("normalization"))
    else:
        samples = ingest_audio(path, net.spec.meta)
    if len(samples) == 0:
        raise EmptySetError(f"{path}: no samples")
    if samples.modality != modality_of(net):
        raise UsageError(f"{path}: {samples.modality} samples for a {modality_of(net)} model")
    if samples.item_shape != net.input_shape:
        raise UsageError(f"{path}: items shaped {samples.item_shape}, model expects {net.input_shape}")
    return samples


def _thresholds(args):
    return Thresholds(semantic=args.threshold_semantic, activation=args.threshold_activation)


def _detector_config(args):
    return DetectorConfig(_thresholds(args), image_activation=args.image_activation)


def _load_store(args, net):
    store = load_profiles(args.profiles, net)
    if store.modality != modality_of(net):
        raise UsageError(f"profiles are for {store.modality}, model is {modality_of(net)}")
    return store


def _safe_name(sample_id):
    return re.sub(r"[^A-Za-z0-9._-]+", "_", sample_id)


# -- commands ----------------------------------------------------------------------

def cmd_profile(args):
    net = resolve_model(args.model)
    calib = load_inputs(args.calib, net)
    cfg = ProfileConfig(args.min_samples,
                        CropConfig(args.alpha, args.min_frac, args.weighted_cam),
                        args.pattern_size)
    store = build_profiles(net, calib, cfg)
    save_profiles(store, args.out)
    print(summary_table(store))
    if len(store.profiles) > 1:
        labels, mat = profile_distance_report(store)
        print("\npairwise activation inconsistency between profiles")
        print(" " * 12 + "".join(f"{l[:10]:>11}" for l in labels))
        for l, row in zip(labels, mat):
            print(f"{l[:12]:<12}" + "".join(f"{v:>11.4f}" for v in row))
    return 0


def _dump_saliency(net, samples, store, outdir):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    feats = analyze(net, samples.items, store.modality, store.crop, store.pattern_size,
                    keep_saliency=True)
    for sid, f in zip(samples.ids, feats):
        if f.saliency is None:
            continue
        peak = f.saliency.max()
        write_pnm(outdir / f"{_safe_name(sid)}.pgm", f.saliency / peak if peak > 0 else f.saliency)


def cmd_detect(args):
    net = resolve_model(args.model)
    store = _load_store(args, net)
    samples = load_inputs(args.input, net)
    reports = detect(net, samples, store, _detector_config(args), args.workers)
    if args.out:
        write_reports(reports, args.out)
    else:
        for r in reports:
            save_report(r, sys.stdout)
    if args.dump_saliency:
        if store.modality != "image":
            raise UsageError("--dump-saliency applies to image models only")
        _dump_saliency(net, samples, store, args.dump_saliency)
    return 2 if any(r.flagged for r in reports) else 0


def _class_indices(net, text):
    if not text:
        return list(range(len(net.class_labels)))
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok in net.class_labels:
            out.append(net.class_labels.index(tok))
        elif tok.isdigit() and int(tok) < len(net.class_labels):
            out.append(int(tok))
        else:
            raise UsageError(f"unknown class {tok!r}")
    return out


def cmd_attack(args):
    net = resolve_model(args.model)
    carriers = load_inputs(args.carriers, net)
    kinds = [k.strip() for k in args.kind.split(",") if k.strip()]
    if kinds == ["patch"]:
        if modality_of(net) != "image":
            raise UsageError("patch attacks apply to image models only")
        out = patch_attack_set(net, carriers, _class_indices(net, args.targets), args.side,
                               args.groups, args.group_size, args.steps, args.step_size, args.seed)
    elif kinds and set(kinds) <= {"fgsm", "bim"}:
        target = _class_indices(net, args.target)[0] if args.target else None
        eps = [float(e) for e in args.epsilons.split(",")]
        out = noise_attack_set(net, carriers, kinds, eps, args.iterations, target)
    else:
        raise UsageError("--kind is 'patch' or a comma list of fgsm,bim")
    save_sampleset(out, args.out)
    fooled = sum(bool(m.get("fooled")) for m in out.meta)
    print(f"{len(out)} attacked samples written to {args.out} ({fooled} fooled the model)")
    return 0


def _mark_truth(samples, truth, where):
    for m in samples.meta:
        t = m.get("truth")
        if t is None and truth == "natural":
            m["truth"] = "natural"
        elif t != truth:
            raise UsageError(f"{where}: every item must be marked {truth}, found {t!r}")


def cmd_evaluate(args):
    net = resolve_model(args.model)
    store = _load_store(args, net)
    naturals = load_inputs(args.naturals, net)
    attacks = load_inputs(args.attacks, net)
    _mark_truth(naturals, "natural", args.naturals)
    _mark_truth(attacks, "adversarial", args.attacks)
    cfg = _detector_config(args)
    reports = (detect(net, naturals, store, cfg, args.workers)
               + detect(net, attacks, store, cfg, args.workers))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_reports(reports, out / "reports.jsonl")
    # the summary is derived from the written records only
    grid = parse_grid(args.grid) if args.grid else None
    summary = summarize(read_reports(out / "reports.jsonl"), store.modality, grid,
                        args.max_fpr, successful_only=not args.include_failed)
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary.to_record(), fh, indent=1)
        fh.write("\n")
    print(summary.table())
    return 0


def _as_image(x, net):
    norm = net.spec.meta.get("normalization")
    if modality_of(net) == "image":
        x = denormalize_image(x, norm)
    else:
        lo, hi = float(x.min()), float(x.max())
        x = (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)
    return np.clip(x, 0.0, 1.0)


def cmd_visualize(args):
    net = resolve_model(args.model)
    k_total = net.last_conv_shape[0]
    if args.channel_list:
        channels = [int(c) for c in args.channel_list.split(",")]
    else:
        channels = list(range(min(args.channels, k_total)))
    bad = [c for c in channels if not 0 <= c < k_total]
    if bad:
        raise UsageError(f"channels {bad} outside 0..{k_total - 1}")
    box = input_box(net)
    value_box = (float(np.min(box[0])), float(np.max(box[1]))) if box is not None else None
    cfg = AscentConfig(eta=args.eta, steps=args.steps, regularization=args.regularization,
                       value_box=value_box)
    results, aggregate = maximize_last_conv(net, cfg, args.seed, channels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = "ppm" if net.input_shape[0] == 3 else "pgm"
    lines = [f"regularization {args.regularization}  steps {args.steps}  eta {args.eta}  "
             f"seed {args.seed}", f"aggregate mean_activation {aggregate:.6g}"]
    for k, res in results.items():
        img = _as_image(res.pattern, net)
        if img.shape[0] not in (1, 3):
            img = img.mean(axis=0, keepdims=True)
        write_pnm(out / f"channel_{k:03d}.{ext}", img)
        lines.append(f"channel {k} mean_activation {res.mean_activation:.6g}")
    (out / "activations.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 0


def cmd_synth(args):
    if args.modality == "image":
        x, labels = synth.image_dataset(args.per_class, args.seed)
        if args.raw:
            out = Path(args.out)
            for i, (img, label) in enumerate(zip(x, labels)):
                (out / label).mkdir(parents=True, exist_ok=True)
                write_pnm(out / label / f"{i:05d}.ppm", img)
            print(f"{len(x)} images written under {out}")
            return 0
        samples = SampleSet(x, "image", labels, [f"img{i:05d}" for i in range(len(x))])
    else:
        if args.raw:
            rng = np.random.default_rng(args.seed)
            out = Path(args.out)
            count = 0
            for _ in range(args.per_class):
                for word in synth.AUDIO_CLASSES:
                    (out / word).mkdir(parents=True, exist_ok=True)
                    write_wav(out / word / f"{count:05d}.wav", synth.render_command(word, rng))
                    count += 1
            print(f"{count} waveforms written under {out}")
            return 0
        net = resolve_model(args.model or "desk_audio")
        meta = net.spec.meta
        feats, labels = synth.audio_dataset(args.per_class, args.seed,
                                            cfg=MfccConfig.from_dict(meta.get("mfcc", {})),
                                            target_frames=int(meta["target_frames"]))
        x = np.stack([scale_features(f, meta.get("feature_scaling"))[None] for f in feats])
        samples = SampleSet(x, "audio-mfcc", labels, [f"cmd{i:05d}" for i in range(len(x))])
    for m in samples.meta:
        m["truth"] = "natural"
    samples.info = {"generator": f"synth-{args.modality}", "seed": args.seed,
                    "per_class": args.per_class}
    save_sampleset(samples, args.out)
    print(f"{len(samples)} samples written to {args.out}")
    return 0


# -- argument parsing ------------------------------------------------------------

def _add_common(p, profiles=True):
    p.add_argument("--model", required=True,
                   help="model bundle directory or a bundled name (desk_image, desk_audio)")
    if profiles:
        p.add_argument("--profiles", required=True, help="profile store directory")


def _add_detector(p):
    p.add_argument("--threshold-semantic", type=float, default=Thresholds.semantic)
    p.add_argument("--threshold-activation", type=float, default=Thresholds.activation)
    p.add_argument("--image-activation", action="store_true",
                   help="let d_activation drive image verdicts too")
    p.add_argument("--workers", type=int, default=default_workers())


def build_parser():
    ap = _Parser(prog="selfverify", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("profile", help="build per-class profiles from a calibration set")
    _add_common(p, profiles=False)
    p.add_argument("--calib", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-samples", type=int, default=20)
    p.add_argument("--alpha", type=float, default=CropConfig.alpha)
    p.add_argument("--min-frac", type=float, default=CropConfig.min_frac)
    p.add_argument("--pattern-size", type=int, default=DEFAULT_SIZE)
    p.add_argument("--weighted-cam", action="store_true")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("detect", help="classify inputs and flag inconsistent ones")
    _add_common(p)
    p.add_argument("--input", required=True, help="sample set, raw directory or one file")
    p.add_argument("--out", help="report file (default: stdout)")
    p.add_argument("--dump-saliency", metavar="DIR")
    _add_detector(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("attack", help="generate attacked samples")
    _add_common(p, profiles=False)
    p.add_argument("--carriers", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", default="patch", help="patch, or a comma list of fgsm,bim")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--targets", help="patch target classes (default: all)")
    p.add_argument("--side", type=int, default=8)
    p.add_argument("--groups", type=int, default=25)
    p.add_argument("--group-size", type=int, default=8)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--step-size", type=float, default=0.05)
    p.add_argument("--epsilons", default="0.05,0.1")
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--target", help="target class for fgsm/bim (default: untargeted)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("evaluate", help="detection rates on naturals vs attacks")
    _add_common(p)
    p.add_argument("--naturals", required=True)
    p.add_argument("--attacks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", help="threshold grid, start:stop:step or a comma list")
    p.add_argument("--max-fpr", type=float, default=0.1)
    p.add_argument("--include-failed", action="store_true",
                   help="count attacks that did not fool the model")
    _add_detector(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("visualize", help="activation maximization of last-conv channels")
    _add_common(p, profiles=False)
    p.add_argument("--out", required=True)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--channel-list")
    p.add_argument("--steps", type=int, default=256)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--regularization", choices=("none", "semantic"), default="none")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("synth", help="write a synthetic desk dataset")
    p.add_argument("--modality", choices=("image", "audio"), required=True)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--raw", action="store_true", help="write PPM/WAV files instead of a sample set")
    p.add_argument("--model", help="audio model whose feature scaling to apply")
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, SelfVerifyError, OSError, ValueError) as exc:
        print(f"selfverify {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
