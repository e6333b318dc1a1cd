"""Command-line entry point: ``darkaction <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error. Any
failure prints a single ``error: ...`` line to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bias_bench, gradcheck, media_io
from .enhancement import LossWeights, NumericalError, enhance_clip, gamma_correct
from .head import FocalConfig, HeadConfig, featurize_frames
from .media_io import ConfigError, FormatError, IngestionError
from .rng import Rng
from .sampling import STRATEGIES, DatasetStats, SamplingParams, plan_sampling, sample_clip
from .train import HeadModel, TrainingError, load_model, predict_video, save_model, sequence_from_plan, train_head


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_enhance(args) -> int:
    video = media_io.load_video(args.inp)
    weights = LossWeights(args.w_spa, args.w_col, args.w_tv, args.e)
    out_clip, results = enhance_clip(video, workers=args.workers, weights=weights, steps=args.steps, lr=args.lr)
    out = Path(args.out)
    media_io.save_video(out, out_clip.frames)
    report = {"frames": [dict(frame=i + 1, **r.report()) for i, r in enumerate(results)]}
    _write_json(out / "report.json", report)
    print(f"enhanced {video.n_frames} frame(s) into {out}")
    return 0


def cmd_gamma(args) -> int:
    if args.g <= 0:
        raise UsageError(f"--g must be > 0, got {args.g}")
    video = media_io.load_video(args.inp)
    media_io.save_video(args.out, [gamma_correct(f, args.g) for f in video.frames])
    print(f"gamma-corrected {video.n_frames} frame(s) into {args.out}")
    return 0


def cmd_sample(args) -> int:
    video = media_io.load_video(args.inp)
    params = SamplingParams(args.t, args.beta, args.gamma_max, args.alpha)
    stats = None
    if args.nmax is not None:
        stats = DatasetStats(args.nmin if args.nmin is not None else video.n_frames, args.nmax)
    elif args.strategy in ("constant", "variable"):
        raise UsageError(f"strategy {args.strategy} requires --nmax (and --nmin for variable)")
    if args.strategy == "variable" and args.nmin is None:
        raise UsageError("strategy variable requires --nmin")
    clip, plan = sample_clip(video, args.strategy, params, stats, Rng(args.seed))
    out = Path(args.out)
    media_io.save_video(out, clip.frames)
    _write_json(out / "plan.json", {"strategy": args.strategy, "t": args.t, "n": video.n_frames,
                                    **plan.to_json()})
    print(f"sampled {plan.m} of {video.n_frames} frame(s) into {args.t} slots (p1={plan.p1}, p2={plan.p2})")
    return 0


def cmd_featurize(args) -> int:
    video = media_io.load_video(args.inp)
    feats = featurize_frames(video.frames, args.grid)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    media_io.save_tensor(args.out, feats, "f64")
    print(f"wrote {feats.shape[0]}x{feats.shape[1]} features to {args.out}")
    return 0


def _load_training_set(data_dir: Path):
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.is_file():
        raise DataError(f"missing {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    samples = []
    for entry in manifest.get("samples", []):
        feats = media_io.load_tensor(data_dir / entry["file"]).astype(np.float64)
        if feats.ndim != 2:
            raise DataError(f"{entry['file']}: expected an (N, D) feature tensor")
        samples.append((feats, int(entry["label"])))
    if not samples:
        raise DataError("training manifest lists no samples")
    dims = {f.shape[1] for f, _ in samples}
    if len(dims) != 1:
        raise DataError(f"feature widths differ across samples: {sorted(dims)}")
    classes = int(manifest.get("classes", max(y for _, y in samples) + 1))
    return samples, dims.pop(), classes, int(manifest.get("grid", 4))


def cmd_train_head(args) -> int:
    cfg = media_io.load_config(args.config) if args.config else media_io.validate_config({})
    samples, dim, classes, grid = _load_training_set(Path(args.data))
    sampling = SamplingParams(cfg["t_frames"], cfg["beta"], cfg["gamma_max"], cfg["alpha"])
    config = HeadConfig(dim=dim, heads=args.heads, classes=classes, t_len=args.t_len)
    focal = FocalConfig(cfg["focal_gamma"], (cfg["focal_alpha"],) * classes)
    rng = Rng(args.seed)

    def view(i, r):
        feats = samples[i][0]
        plan = plan_sampling(feats.shape[0], "delta", sampling, r)
        return sequence_from_plan(feats, plan, config.t_len)

    dataset = [(view(i, rng), y) for i, (_, y) in enumerate(samples)]
    params, history = train_head(dataset, config, focal, epochs=args.epochs, rng=rng, lr_max=args.lr, augment=view)
    out = Path(args.out)
    save_model(out, HeadModel(params, config, sampling, grid))
    _write_json(out / "history.json", [{"epoch": i + 1, "loss": h.loss, "accuracy": h.accuracy}
                                       for i, h in enumerate(history)])
    print(f"trained on {len(samples)} clip(s); final accuracy {history[-1].accuracy:.4f}")
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    video = media_io.load_video(args.inp)
    label, probs = predict_video(video, model, Rng(args.seed), args.tta)
    print(json.dumps({"class": label, "probabilities": probs.tolist()}))
    return 0


def cmd_bias_experiment(args) -> int:
    cfg = media_io.load_config(args.config)
    spec, strategies, sampling, head_config, settings = bias_bench.from_config(cfg)
    report = bias_bench.run_bias_experiment(spec, strategies, sampling, head_config, settings, workers=args.workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, report.to_json())
    print(report.table())
    return 0


def cmd_gradcheck(args) -> int:
    enh = gradcheck.check_enhancement(args.trials, seed=args.seed)
    head = gradcheck.check_head(max(1, args.trials // 10), seed=args.seed)
    enh_max = max(enh)
    head_max = max(h.max_error for h in head)
    ok_enh = enh_max < args.tol_enhance
    ok_head = head_max < args.tol_head
    print(f"enhancement: {len(enh)} trial(s), max relative error {enh_max:.3e} "
          f"(tol {args.tol_enhance:g}) {'PASS' if ok_enh else 'FAIL'}")
    print(f"head: {len(head)} trial(s), max relative error {head_max:.3e} "
          f"(tol {args.tol_head:g}) {'PASS' if ok_head else 'FAIL'}")
    if not (ok_enh and ok_head):
        raise NumericalError("gradient check failed")
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="darkaction", description="Low-light action recognition toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
        return p

    p = add("enhance", cmd_enhance, "zero-reference curve enhancement of every frame")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--w-spa", type=float, default=10.0)
    p.add_argument("--w-col", type=float, default=5.0)
    p.add_argument("--w-tv", type=float, default=200.0)
    p.add_argument("--e", type=float, default=0.6)
    p.add_argument("--seed", type=int, default=0)

    p = add("gamma", cmd_gamma, "blanket gamma correction")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--g", type=float, required=True)

    p = add("sample", cmd_sample, "sample a clip into exactly T slots")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", choices=STRATEGIES, required=True)
    p.add_argument("--t", type=int, default=64)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--gamma-max", type=float, default=1.5)
    p.add_argument("--alpha", type=float, default=4.0)
    p.add_argument("--nmax", type=int)
    p.add_argument("--nmin", type=int)
    p.add_argument("--seed", type=int, default=0)

    p = add("featurize", cmd_featurize, "per-frame grid descriptors to a DSRB tensor")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=int, default=4)

    p = add("train-head", cmd_train_head, "train the temporal attention head")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--t-len", type=int, default=8)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--lr", type=float, default=3e-3)

    p = add("predict", cmd_predict, "classify a frame directory with test-time sampling augmentation")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--tta", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)

    p = add("bias-experiment", cmd_bias_experiment, "synthetic clip-length leakage benchmark")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = add("gradcheck", cmd_gradcheck, "finite-difference checks of both analytic gradients")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--tol-enhance", type=float, default=1e-5)
    p.add_argument("--tol-head", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    return parser


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "workers", 1) < 1:
            raise UsageError("--workers must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, IngestionError, ConfigError, DataError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, TrainingError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
