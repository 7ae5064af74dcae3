"""Corpus scanning, synthetic data, the binary feature cache and model files.

Feature cache layout (little endian)::

    b"SERF"  u32 version  u32 N  u32 t  u32 d  32-byte FeatureConfig digest
    N*t*d float64 values (sample-major, then frame, then coefficient)
    N u8 label indices

Model files are JSON: ``{"schema_version": 1, "kind": "lstm" | "svm",
"labels": [...], "payload": {...}}`` with matrices as row-major nested
lists. Python's float repr is the shortest round-trip decimal, so every
float64 survives a save/load exactly.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioClip
from .errors import (
    BadMagic,
    ConfigHashMismatch,
    EmptyCorpus,
    MalformedDocument,
    SchemaVersionMismatch,
    SizeMismatch,
    UnknownEmotionToken,
    VersionMismatch,
)
from .features import FeatureConfig
from .model import DenseLayer, LstmParams, ModelState
from .svm import ScalerParams, SvmBinary, SvmModel
from .train import substream

EMOTIONS = ("angry", "disgust", "fear", "happy", "neutral", "pleasant_surprise", "sad")

_ALIASES = {
    "ps": "pleasant_surprise",
    "pleasant_surprise": "pleasant_surprise",
    "pleasant_surprised": "pleasant_surprise",
    "surprise": "pleasant_surprise",
    "surprised": "pleasant_surprise",
}

CACHE_MAGIC = b"SERF"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sIIII32s")

SCHEMA_VERSION = 1


def label_from_stem(stem: str) -> str:
    """Emotion named by the last underscore-separated token of a file stem.

    ``OAF_back_angry`` gives ``angry``; ``YAF_dog_ps`` and stems ending in
    ``pleasant_surprised`` give ``pleasant_surprise``.
    """
    lowered = stem.lower()
    for suffix in ("pleasant_surprised", "pleasant_surprise"):
        if lowered.endswith("_" + suffix) or lowered == suffix:
            return "pleasant_surprise"
    token = lowered.rsplit("_", 1)[-1]
    if token in _ALIASES:
        return _ALIASES[token]
    if token in EMOTIONS:
        return token
    raise UnknownEmotionToken(f"cannot map {token!r} (from {stem!r}) to an emotion")


@dataclass
class Manifest:
    entries: list[tuple[str, str]]  # (path, emotion)
    source: str = "tess"

    def __post_init__(self):
        paths = [p for p, _ in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest paths must be unique")
        for _, label in self.entries:
            if label not in EMOTIONS:
                raise UnknownEmotionToken(label)

    def label_indices(self) -> np.ndarray:
        return np.array([EMOTIONS.index(l) for _, l in self.entries], dtype=np.int64)

    def histogram(self) -> dict[str, int]:
        counts = dict.fromkeys(EMOTIONS, 0)
        for _, label in self.entries:
            counts[label] += 1
        return counts


def scan_tess(root: str | Path) -> Manifest:
    """Every ``*.wav`` under ``root`` (case-insensitive), sorted by path."""
    root = Path(root)
    if not root.is_dir():
        raise EmptyCorpus(f"{root} is not a directory")
    files = sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() == ".wav")
    if not files:
        raise EmptyCorpus(f"no .wav files under {root}")
    entries = []
    for p in files:
        try:
            entries.append((str(p), label_from_stem(p.stem)))
        except UnknownEmotionToken as exc:
            raise UnknownEmotionToken(f"{p}: {exc}") from None
    return Manifest(entries, "tess")


def synthetic_clip(k: int, rng: np.random.Generator, duration_s: float = 1.5, sample_rate: int = 22050) -> np.ndarray:
    """One class-``k`` signal: AM tone with vibrato of depth ``d`` Hz at rate ``v`` Hz, plus 20 dB SNR noise."""
    t = np.arange(int(round(duration_s * sample_rate))) / sample_rate
    f, v, d, r = 180.0 + 60.0 * k, 2.0 + k, 5.0 + 3.0 * k, 1.0 + 0.5 * k
    ph_c, ph_v, ph_a = rng.uniform(0, 2 * np.pi, 3)
    envelope = 1.0 + 0.3 * np.sin(2 * np.pi * r * t + ph_a)
    # instantaneous frequency f + d*sin(2*pi*v*t): the vibrato term enters the phase integrated
    phase = 2 * np.pi * f * t - (d / v) * np.cos(2 * np.pi * v * t + ph_v) + ph_c
    tone = envelope * np.sin(phase)
    noise_power = np.mean(tone**2) / 10.0 ** (20.0 / 10.0)
    signal = tone + rng.normal(scale=np.sqrt(noise_power), size=t.size)
    # headroom: the envelope peaks at 1.3 before noise
    return np.clip(0.5 * signal, -1.0, 1.0)


def generate_synthetic(n_per_class: int, duration_s: float = 1.5, sample_rate: int = 22050, seed: int = 1234):
    """``(clips, labels)`` with ``n_per_class`` clips per emotion, class-major order."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    rng = substream(seed, "synth")
    clips, labels = [], []
    for k in range(len(EMOTIONS)):
        for _ in range(n_per_class):
            clips.append(AudioClip(synthetic_clip(k, rng, duration_s, sample_rate), sample_rate))
            labels.append(k)
    return clips, np.array(labels, dtype=np.int64)


def synthetic_filename(index: int, k: int) -> str:
    token = "ps" if EMOTIONS[k] == "pleasant_surprise" else EMOTIONS[k]
    return f"SYN_{index:05d}_{token}.wav"


# -- feature cache --------------------------------------------------------


@dataclass
class FeatureCache:
    features: np.ndarray  # N x t x d
    labels: np.ndarray  # N, uint8 class indices
    config_digest: bytes = bytes(32)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.features.ndim != 3 or len(self.labels) != len(self.features):
            raise SizeMismatch("features must be N x t x d with one label per sample")
        if len(self.config_digest) != 32:
            raise ValueError("config digest must be 32 bytes")


def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_feature_cache(path: str | Path, cache: FeatureCache) -> None:
    N, t, d = cache.features.shape
    header = _CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, N, t, d, cache.config_digest)
    body = cache.features.astype("<f8").tobytes() + cache.labels.tobytes()
    _atomic_write(Path(path), header + body)


def read_feature_cache(path: str | Path, expected: FeatureConfig | None = None) -> FeatureCache:
    """Load a cache; warns :class:`ConfigHashMismatch` if built under another config."""
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != CACHE_MAGIC:
        raise BadMagic(f"{path}: not a feature cache")
    if len(data) < _CACHE_HEADER.size:
        raise SizeMismatch(f"{path}: header truncated")
    _, version, N, t, d, digest = _CACHE_HEADER.unpack_from(data)
    if version != CACHE_VERSION:
        raise VersionMismatch(f"{path}: cache version {version}, expected {CACHE_VERSION}")
    n_values = N * t * d
    expected_size = _CACHE_HEADER.size + 8 * n_values + N
    if len(data) != expected_size:
        raise SizeMismatch(f"{path}: {len(data)} bytes, header implies {expected_size}")
    off = _CACHE_HEADER.size
    feats = np.frombuffer(data, dtype="<f8", count=n_values, offset=off).reshape(N, t, d).astype(np.float64)
    labels = np.frombuffer(data, dtype=np.uint8, count=N, offset=off + 8 * n_values).copy()
    if expected is not None and digest != expected.digest():
        warnings.warn(ConfigHashMismatch(f"{path} was built under a different feature configuration"))
    return FeatureCache(feats, labels, digest)


# -- model files ----------------------------------------------------------


def _lstm_payload(m: ModelState, extra: dict) -> dict:
    lstm = {k: v.tolist() for k, v in vars(m.lstm).items()}
    head = [{"W": l.W.tolist(), "b": l.b.tolist(), "activation": l.activation, "dropout": l.dropout}
            for l in m.head]
    return {"lstm": lstm, "head": head, **extra}


def _svm_payload(m: SvmModel, extra: dict) -> dict:
    return {
        "scaler": {"mean": m.scaler.mean.tolist(), "std": m.scaler.std.tolist()},
        "gamma": m.gamma,
        "C": m.C,
        "classifiers": [
            {
                "pair": list(pair),
                "support_vectors": clf.support_vectors.tolist(),
                "dual_coefs": clf.dual_coefs.tolist(),
                "b": clf.b,
                "converged": clf.converged,
            }
            for pair, clf in zip(m.pairs, m.classifiers)
        ],
        **extra,
    }


def save_model(path: str | Path, model, **extra) -> None:
    """Write an LSTM or SVM model as JSON. ``extra`` lands in the payload (e.g. split info)."""
    if isinstance(model, ModelState):
        kind, payload = "lstm", _lstm_payload(model, extra)
    elif isinstance(model, SvmModel):
        kind, payload = "svm", _svm_payload(model, extra)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    doc = {"schema_version": SCHEMA_VERSION, "kind": kind, "labels": list(model.labels), "payload": payload}
    _atomic_write(Path(path), (json.dumps(doc, separators=(",", ":")) + "\n").encode())


def _arr(x, ndim):
    a = np.array(x, dtype=np.float64)
    if a.ndim != ndim and not (a.size == 0 and ndim == 2):
        raise MalformedDocument(f"expected a {ndim}-d array, got shape {a.shape}")
    return a


def _load_lstm(doc) -> ModelState:
    p = doc["payload"]
    lstm = LstmParams(**{k: _arr(v, 2 if k.startswith("W") else 1) for k, v in p["lstm"].items()})
    head = [DenseLayer(_arr(l["W"], 2), _arr(l["b"], 1), l["activation"], l["dropout"]) for l in p["head"]]
    return ModelState(lstm, head, list(doc["labels"]))


def _load_svm(doc) -> SvmModel:
    p = doc["payload"]
    scaler = ScalerParams(_arr(p["scaler"]["mean"], 1), _arr(p["scaler"]["std"], 1))
    pairs, classifiers = [], []
    d = len(scaler.mean)
    for c in p["classifiers"]:
        sv = _arr(c["support_vectors"], 2).reshape(-1, d)
        classifiers.append(SvmBinary(sv, _arr(c["dual_coefs"], 1), float(c["b"]), float(p["gamma"]),
                                     float(p["C"]), bool(c["converged"])))
        pairs.append(tuple(c["pair"]))
    return SvmModel(scaler, pairs, classifiers, list(doc["labels"]), float(p["gamma"]), float(p["C"]))


def load_document(path: str | Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"{path}: {exc}") from None
    if not isinstance(doc, dict) or not {"schema_version", "kind", "labels", "payload"} <= doc.keys():
        raise MalformedDocument(f"{path}: missing model fields")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"{path}: schema_version {doc['schema_version']}, expected {SCHEMA_VERSION}")
    return doc


def load_model(path: str | Path, kind: str | None = None):
    """Load a model file; pass ``kind`` to insist on ``"lstm"`` or ``"svm"``."""
    doc = load_document(path)
    if kind is not None and doc["kind"] != kind:
        raise MalformedDocument(f"{path} holds a {doc['kind']!r} model, not {kind!r}")
    try:
        if doc["kind"] == "lstm":
            return _load_lstm(doc)
        if doc["kind"] == "svm":
            return _load_svm(doc)
    except (KeyError, TypeError) as exc:
        raise MalformedDocument(f"{path}: {exc!r}") from None
    raise MalformedDocument(f"{path}: unknown model kind {doc['kind']!r}")
