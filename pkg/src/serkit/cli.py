"""Command-line entry point: ``serkit {synth,extract,train,eval,predict,baseline}``.

Exit codes: 0 ok, 2 corpus/input error, 3 I/O error, 4 configuration
error, 5 model/data mismatch. Progress goes to stderr, results to stdout.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .audio import fix_length, load_wav, resample, write_wav
from .dataset import (
    EMOTIONS,
    FeatureCache,
    generate_synthetic,
    load_document,
    load_model,
    read_feature_cache,
    save_model,
    scan_tess,
    synthetic_filename,
    write_feature_cache,
)
from .errors import ConfigError, EmptyDataset, InconsistentShapes, InputError, MismatchError
from .evaluation import accuracy, confusion_matrix, render_csv, render_json, render_text
from .features import FeatureConfig, mean_pool, mfcc
from .model import ModelState, predict_proba
from .svm import svm_fit, svm_predict_indices
from .train import TrainConfig, stratified_split, train, write_history

log = logging.getLogger("serkit")

DEFAULT_SEED = 1234
EXIT_OK, EXIT_INPUT, EXIT_IO, EXIT_CONFIG, EXIT_MISMATCH = 0, 2, 3, 4, 5


@dataclass(frozen=True)
class RunConfig:
    features: FeatureConfig
    duration: float
    train: TrainConfig
    svm_C: float
    svm_tol: float
    test_fraction: float
    seed: int
    jobs: int

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        get = lambda name, default: getattr(args, name, default)
        features = FeatureConfig(
            sample_rate=get("sample_rate", 22050),
            n_fft=get("n_fft", 2048),
            hop_length=get("hop_length", 512),
            n_mels=get("n_mels", 128),
            n_mfcc=get("n_mfcc", 40),
        )
        seed = get("seed", DEFAULT_SEED)
        train_cfg = TrainConfig(
            epochs=get("epochs", 100),
            batch_size=get("batch_size", 512),
            learning_rate=get("learning_rate", 1e-3),
            seed=seed,
        )
        cfg = cls(features, get("duration", 3.0), train_cfg, get("C", 10.0), get("tol", 1e-3),
                  get("test_fraction", 0.2), seed, get("jobs", 1))
        if cfg.duration <= 0:
            raise ConfigError("--duration must be positive")
        if not 0 < cfg.test_fraction < 1:
            raise ConfigError("--test-fraction must be in (0, 1)")
        if cfg.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if cfg.svm_C <= 0 or cfg.svm_tol <= 0:
            raise ConfigError("--C and --tol must be positive")
        return cfg


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def split_checksum(test_idx) -> str:
    return hashlib.sha256(np.asarray(test_idx, dtype="<u4").tobytes()).hexdigest()[:16]


def _extract_one(args):
    path, cfg, duration = args
    clip = fix_length(resample(load_wav(path), cfg.sample_rate), duration)
    return mfcc(clip, cfg)


def _extract_all(paths, cfg: FeatureConfig, duration: float, jobs: int) -> np.ndarray:
    tasks = [(p, cfg, duration) for p in paths]
    feats = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for k, f in enumerate(pool.map(_extract_one, tasks, chunksize=16), 1):
                feats.append(f)
                if k % 200 == 0:
                    _progress(f"extracted {k}/{len(tasks)}")
    else:
        for k, t in enumerate(tasks, 1):
            feats.append(_extract_one(t))
            if k % 200 == 0:
                _progress(f"extracted {k}/{len(tasks)}")
    return np.stack(feats)


def cmd_synth(args) -> int:
    cfg = RunConfig.from_args(args)
    if args.n_per_class < 1:
        raise ConfigError("--n-per-class must be >= 1")
    if args.out is None and args.features is None:
        raise ConfigError("give --out DIR for WAV files or --features PATH for a cache")
    clips, labels = generate_synthetic(args.n_per_class, args.clip_duration, cfg.features.sample_rate, cfg.seed)
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "manifest.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "label"])
            for k, (clip, lab) in enumerate(zip(clips, labels)):
                name = synthetic_filename(k, int(lab))
                write_wav(out / name, clip.samples, clip.sample_rate)
                w.writerow([name, EMOTIONS[lab]])
        print(f"wrote {len(clips)} clips to {out}")
    if args.features is not None:
        # quantize like the WAV route so both paths give identical features
        from .audio import AudioClip
        feats = []
        for clip in clips:
            q = np.clip(np.round(clip.samples * 32768.0), -32768, 32767) / 32768.0
            feats.append(mfcc(fix_length(AudioClip(q, clip.sample_rate), cfg.duration), cfg.features))
        cache = FeatureCache(np.stack(feats), labels, cfg.features.digest())
        write_feature_cache(args.features, cache)
        N, t, d = cache.features.shape
        print(f"N={N} t={t} d={d}")
    return EXIT_OK


def cmd_extract(args) -> int:
    cfg = RunConfig.from_args(args)
    manifest = scan_tess(args.corpus)
    _progress(f"found {len(manifest.entries)} files: {manifest.histogram()}")
    feats = _extract_all([p for p, _ in manifest.entries], cfg.features, cfg.duration, cfg.jobs)
    cache = FeatureCache(feats, manifest.label_indices(), cfg.features.digest())
    write_feature_cache(args.cache, cache)
    N, t, d = feats.shape
    print(f"N={N} t={t} d={d}")
    return EXIT_OK


def _load_cache(path, cfg: RunConfig | None = None) -> FeatureCache:
    return read_feature_cache(path, cfg.features if cfg else None)


def _print_final(metrics) -> None:
    print(f"Training Accuracy: {100 * metrics.train_accuracy:.2f}%")
    print(f"Training Loss: {metrics.train_loss:.4f}")
    print(f"Validation Accuracy: {100 * metrics.val_accuracy:.2f}%")
    print(f"Validation Loss: {metrics.val_loss:.4f}")


def cmd_train(args) -> int:
    cfg = RunConfig.from_args(args)
    cache = _load_cache(args.cache)
    X, y = cache.features, cache.labels.astype(np.int64)
    tr, te = stratified_split(y, cfg.test_fraction, cfg.seed)
    print(f"test_split_checksum={split_checksum(te)} train={len(tr)} test={len(te)}")

    def on_epoch(m):
        print(f"epoch={m.epoch} train_loss={m.train_loss!r} train_acc={m.train_accuracy!r} "
              f"val_loss={m.val_loss!r} val_acc={m.val_accuracy!r}", flush=True)

    try:
        model, history = train((X[tr], y[tr]), (X[te], y[te]), cfg.train, cfg.seed, list(EMOTIONS), on_epoch)
    except (InconsistentShapes, EmptyDataset) as exc:
        raise ConfigError(str(exc)) from None
    history_path = args.history or str(Path(args.model).with_suffix("")) + ".history.csv"
    write_history(history_path, history)
    save_model(
        args.model,
        model,
        frames=int(X.shape[1]),
        feature_digest=cache.config_digest.hex(),
        split={"seed": cfg.seed, "test_fraction": cfg.test_fraction},
    )
    _print_final(history[-1])
    _progress(f"model written to {args.model}, history to {history_path}")
    return EXIT_OK


def _report(cm, args) -> None:
    print(render_text(cm))
    if getattr(args, "csv", None):
        Path(args.csv).write_text(render_csv(cm))
    if getattr(args, "json", None):
        Path(args.json).write_text(render_json(cm) + "\n")


def _eval_rows(doc, y, args):
    if args.split == "all":
        return np.arange(len(y))
    split = doc["payload"].get("split")
    if split is None:
        raise MismatchError("model does not record its split; use --split all")
    _, te = stratified_split(y, split["test_fraction"], split["seed"])
    print(f"test_split_checksum={split_checksum(te)}")
    return te


def _predict_cache(model, doc, X) -> np.ndarray:
    if isinstance(model, ModelState):
        if X.shape[2] != model.lstm.input_size:
            raise MismatchError(f"cache has d={X.shape[2]}, model expects {model.lstm.input_size}")
        frames = doc["payload"].get("frames")
        if frames is not None and X.shape[1] != frames:
            raise MismatchError(f"cache has t={X.shape[1]}, model was trained on t={frames}")
        return np.argmax(predict_proba(model, X), axis=1)
    if X.shape[2] != len(model.scaler.mean):
        raise MismatchError(f"cache has d={X.shape[2]}, model expects {len(model.scaler.mean)}")
    return svm_predict_indices(model, X.mean(axis=1))


def cmd_eval(args, kind: str | None = None) -> int:
    doc = load_document(args.model)
    model = load_model(args.model, kind)
    cache = _load_cache(args.cache)
    y = cache.labels.astype(np.int64)
    rows = _eval_rows(doc, y, args)
    pred = _predict_cache(model, doc, cache.features[rows])
    names = list(model.labels)
    cm = confusion_matrix([names[k] for k in y[rows]], [names[k] for k in pred], names)
    _report(cm, args)
    print(f"accuracy={accuracy(cm)!r}")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = RunConfig.from_args(args)
    doc = load_document(args.model)
    model = load_model(args.model)
    digest = doc["payload"].get("feature_digest")
    if digest is not None and digest != cfg.features.digest().hex():
        raise MismatchError("feature flags differ from those the model was trained with")
    feats = _extract_one((args.wav, cfg.features, cfg.duration))
    if isinstance(model, ModelState):
        frames = doc["payload"].get("frames")
        if frames is not None and feats.shape[0] != frames:
            raise MismatchError(f"clip gives t={feats.shape[0]}, model expects t={frames}")
        probs = predict_proba(model, feats[None])[0]
        print(model.labels[int(np.argmax(probs))])
        for name, p in zip(model.labels, probs):
            print(f"{name} {float(p)!r}")
    else:
        k = int(svm_predict_indices(model, mean_pool(feats))[0])
        print(model.labels[k])
    return EXIT_OK


def cmd_baseline_train(args) -> int:
    cfg = RunConfig.from_args(args)
    cache = _load_cache(args.cache)
    X, y = cache.features, cache.labels.astype(np.int64)
    tr, te = stratified_split(y, cfg.test_fraction, cfg.seed)
    print(f"test_split_checksum={split_checksum(te)} train={len(tr)} test={len(te)}")
    pooled = X.mean(axis=1)
    model = svm_fit(pooled[tr], y[tr], list(EMOTIONS), cfg.svm_C, cfg.svm_tol, cfg.jobs)
    if not all(c.converged for c in model.classifiers):
        _progress("warning: some binary SVMs did not converge")
    pred = svm_predict_indices(model, pooled[te])
    names = list(EMOTIONS)
    cm = confusion_matrix([names[k] for k in y[te]], [names[k] for k in pred], names)
    if args.model:
        save_model(args.model, model, feature_digest=cache.config_digest.hex(),
                   split={"seed": cfg.seed, "test_fraction": cfg.test_fraction})
    _report(cm, args)
    print(f"Test Accuracy: {100 * accuracy(cm):.2f}%")
    print(f"accuracy={accuracy(cm)!r}")
    return EXIT_OK


def _add_shared(p, seed=True):
    if seed:
        p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="master seed (default %(default)s)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes; 1 is bitwise reproducible")
    p.add_argument("--config", help="JSON file of flag defaults; explicit flags win")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_features(p):
    p.add_argument("--sample-rate", type=int, default=22050)
    p.add_argument("--n-fft", type=int, default=2048)
    p.add_argument("--hop-length", type=int, default=512)
    p.add_argument("--n-mels", type=int, default=128)
    p.add_argument("--n-mfcc", type=int, default=40)
    p.add_argument("--duration", type=float, default=3.0, help="clip length in seconds after pad/trim")


def _add_report(p):
    p.add_argument("--csv", help="write the confusion matrix as long-form CSV")
    p.add_argument("--json", help="write the confusion matrix and metrics as JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="serkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"serkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate the synthetic seven-class corpus")
    p.add_argument("--out", help="directory for 16-bit WAV files and manifest.csv")
    p.add_argument("--features", help="write a feature cache directly instead of (or besides) WAVs")
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--clip-duration", type=float, default=1.5)
    _add_features(p)
    _add_shared(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="scan a corpus and write an MFCC feature cache")
    p.add_argument("corpus")
    p.add_argument("cache")
    _add_features(p)
    _add_shared(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train the LSTM on a feature cache")
    p.add_argument("cache")
    p.add_argument("model")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--history", help="metrics CSV (default: <model>.history.csv)")
    _add_shared(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model on a feature cache")
    p.add_argument("model")
    p.add_argument("cache")
    p.add_argument("--split", choices=("test", "all"), default="test")
    _add_report(p)
    _add_shared(p, seed=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one WAV file")
    p.add_argument("model")
    p.add_argument("wav")
    _add_features(p)
    _add_shared(p, seed=False)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("baseline", help="SVM baseline on mean-pooled MFCCs")
    bsub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    b = bsub.add_parser("train", help="fit and score the SVM on the shared split")
    b.add_argument("cache")
    b.add_argument("model", nargs="?")
    b.add_argument("--C", type=float, default=10.0)
    b.add_argument("--tol", type=float, default=1e-3)
    b.add_argument("--test-fraction", type=float, default=0.2)
    _add_report(b)
    _add_shared(b)
    b.set_defaults(func=cmd_baseline_train)
    b = bsub.add_parser("eval", help="score a saved SVM")
    b.add_argument("model")
    b.add_argument("cache")
    b.add_argument("--split", choices=("test", "all"), default="test")
    _add_report(b)
    _add_shared(b, seed=False)
    b.set_defaults(func=lambda a: cmd_eval(a, kind="svm"))
    return parser


def _iter_parsers(parser):
    yield parser
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for child in action.choices.values():
                yield from _iter_parsers(child)


def _apply_config(parser, argv) -> None:
    """Install values from ``--config`` as parser defaults so explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        values = json.loads(Path(known.config).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{known.config}: {exc}") from None
    if not isinstance(values, dict):
        raise ConfigError(f"{known.config}: expected a JSON object")
    values = {k.replace("-", "_"): v for k, v in values.items()}
    for p in _iter_parsers(parser):
        dests = {a.dest for a in p._actions}
        p.set_defaults(**{k: v for k, v in values.items() if k in dests})


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # usage errors, --help, --version
            return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
        return args.func(args)
    except ConfigError as exc:
        _progress(f"config error: {exc}")
        return EXIT_CONFIG
    except MismatchError as exc:
        _progress(f"model/data mismatch: {exc}")
        return EXIT_MISMATCH
    except InputError as exc:
        _progress(f"input error: {type(exc).__name__}: {exc}")
        return EXIT_INPUT
    except OSError as exc:
        _progress(f"I/O error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
