import json
import re

import numpy as np
import pytest

from serkit.audio import write_wav
from serkit.cli import main, split_checksum
from serkit.dataset import EMOTIONS, read_feature_cache
from serkit.train import read_history, stratified_split


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """Synthetic WAV corpus (5 per class, 0.5 s) and its feature cache."""
    root = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--out", str(root / "wavs"), "--n-per-class", "5", "--clip-duration", "0.5"]) == 0
    assert main(["extract", str(root / "wavs"), str(root / "feats.serf")]) == 0
    return root


def test_synth_and_extract(corpus, capsys):
    wavs = sorted((corpus / "wavs").glob("*.wav"))
    assert len(wavs) == 35
    manifest = (corpus / "wavs" / "manifest.csv").read_text().splitlines()
    assert manifest[0] == "path,label" and len(manifest) == 36
    cache = read_feature_cache(corpus / "feats.serf")
    assert cache.features.shape == (35, 130, 40)
    np.testing.assert_array_equal(np.bincount(cache.labels), [5] * 7)


def test_synth_features_matches_wav_route(corpus, tmp_path, capsys):
    code, out, _ = run(capsys, "synth", "--features", tmp_path / "direct.serf", "--n-per-class", 5,
                       "--clip-duration", 0.5)
    assert code == 0
    assert "N=35 t=130 d=40" in out
    assert (tmp_path / "direct.serf").read_bytes() == (corpus / "feats.serf").read_bytes()


def test_extract_duration_arithmetic(corpus, tmp_path, capsys):
    code, out, _ = run(capsys, "extract", corpus / "wavs", tmp_path / "c.serf", "--duration", 1.0)
    assert code == 0
    # 22050 samples, hop 512: 1 + 22050 // 512 frames
    assert "N=35 t=44 d=40" in out


def test_extract_errors(tmp_path, capsys):
    assert run(capsys, "extract", tmp_path, tmp_path / "c.serf")[0] == 2
    assert not (tmp_path / "c.serf").exists()
    write_wav(tmp_path / "OAF_x_bored.wav", np.zeros(100), 22050)
    code, _, err = run(capsys, "extract", tmp_path, tmp_path / "c.serf")
    assert code == 2 and "OAF_x_bored" in err
    (tmp_path / "OAF_x_bored.wav").unlink()
    (tmp_path / "OAF_x_angry.wav").write_bytes(b"RIFF\x00")
    assert run(capsys, "extract", tmp_path, tmp_path / "c.serf")[0] == 2
    assert not (tmp_path / "c.serf").exists()


def test_synth_zero_per_class_is_usage_error(tmp_path, capsys):
    assert run(capsys, "synth", "--out", tmp_path, "--n-per-class", 0)[0] == 4


def test_unknown_flag_is_config_error(capsys):
    assert run(capsys, "train", "a", "b", "--bogus")[0] == 4


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    assert main(["train", str(corpus / "feats.serf"), str(out / "m.json"), "--epochs", "3",
                 "--batch-size", "8", "--history", str(out / "h.csv")]) == 0
    return out


def test_train_outputs(corpus, trained, tmp_path, capsys):
    code, out, _ = run(capsys, "train", corpus / "feats.serf", tmp_path / "m.json", "--epochs", 3,
                       "--batch-size", 8)
    assert code == 0
    assert len(re.findall(r"^epoch=\d+ ", out, re.M)) == 3
    for key in ("Training Accuracy", "Training Loss", "Validation Accuracy", "Validation Loss"):
        assert key in out
    # default history path and byte-identical rerun
    assert (tmp_path / "m.history.csv").read_bytes() == (trained / "h.csv").read_bytes()
    assert (tmp_path / "m.json").read_bytes() == (trained / "m.json").read_bytes()
    assert len(read_history(trained / "h.csv")) == 3
    doc = json.loads((trained / "m.json").read_text())
    assert doc["kind"] == "lstm" and doc["labels"] == list(EMOTIONS)
    assert doc["payload"]["split"] == {"seed": 1234, "test_fraction": 0.2}


def test_train_config_errors(corpus, tmp_path, capsys):
    assert run(capsys, "train", corpus / "feats.serf", tmp_path / "m.json", "--batch-size", 0)[0] == 4
    assert run(capsys, "train", corpus / "feats.serf", tmp_path / "m.json", "--epochs", 0)[0] == 4
    assert run(capsys, "train", tmp_path / "missing.serf", tmp_path / "m.json")[0] == 3


def test_config_file_sits_under_flags(corpus, tmp_path, capsys):
    (tmp_path / "cfg.json").write_text(json.dumps({"epochs": 2, "batch_size": 8}))
    code, out, _ = run(capsys, "train", corpus / "feats.serf", tmp_path / "m.json", "--config", tmp_path / "cfg.json")
    assert code == 0 and len(re.findall(r"^epoch=", out, re.M)) == 2
    code, out, _ = run(capsys, "train", corpus / "feats.serf", tmp_path / "m.json", "--config",
                       tmp_path / "cfg.json", "--epochs", 1)
    assert code == 0 and len(re.findall(r"^epoch=", out, re.M)) == 1
    (tmp_path / "bad.json").write_text("[1")
    assert run(capsys, "train", corpus / "feats.serf", tmp_path / "m.json", "--config", tmp_path / "bad.json")[0] == 4


def test_eval_matches_training_report(corpus, trained, tmp_path, capsys):
    history = read_history(trained / "h.csv")
    code, out, _ = run(capsys, "eval", trained / "m.json", corpus / "feats.serf",
                       "--csv", tmp_path / "cm.csv", "--json", tmp_path / "cm.json")
    assert code == 0
    acc = float(re.search(r"^accuracy=(.*)$", out, re.M).group(1))
    assert acc == history[-1].val_accuracy
    assert (tmp_path / "cm.csv").read_text().startswith("true_label,pred_label,count\n")
    report = json.loads((tmp_path / "cm.json").read_text())
    assert sum(map(sum, report["counts"])) == 7
    code, out, _ = run(capsys, "eval", trained / "m.json", corpus / "feats.serf", "--split", "all")
    assert code == 0 and "/35)" in out


def test_eval_mismatch(corpus, trained, tmp_path, capsys):
    assert run(capsys, "extract", corpus / "wavs", tmp_path / "d20.serf", "--n-mfcc", 20)[0] == 0
    assert run(capsys, "eval", trained / "m.json", tmp_path / "d20.serf")[0] == 5
    assert run(capsys, "extract", corpus / "wavs", tmp_path / "t44.serf", "--duration", 1.0)[0] == 0
    assert run(capsys, "eval", trained / "m.json", tmp_path / "t44.serf")[0] == 5


def test_predict(corpus, trained, tmp_path, capsys):
    write_wav(tmp_path / "silence.wav", np.zeros(22050), 22050)
    code, out, _ = run(capsys, "predict", trained / "m.json", tmp_path / "silence.wav")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] in EMOTIONS
    probs = [float(l.split()[1]) for l in lines[1:]]
    assert [l.split()[0] for l in lines[1:]] == list(EMOTIONS)
    assert sum(probs) == pytest.approx(1.0, abs=1e-12)
    assert run(capsys, "predict", trained / "m.json", tmp_path / "missing.wav")[0] == 3
    assert run(capsys, "predict", trained / "m.json", tmp_path / "silence.wav", "--n-mels", 64)[0] == 5


def test_baseline_shares_the_split(corpus, trained, tmp_path, capsys):
    code, out, _ = run(capsys, "baseline", "train", corpus / "feats.serf", tmp_path / "s.json")
    assert code == 0
    labels = read_feature_cache(corpus / "feats.serf").labels
    _, te = stratified_split(labels, 0.2, 1234)
    assert f"test_split_checksum={split_checksum(te)}" in out
    code, train_out, _ = run(capsys, "train", corpus / "feats.serf", tmp_path / "m.json", "--epochs", 1)
    assert f"test_split_checksum={split_checksum(te)}" in train_out
    acc = float(re.search(r"^accuracy=(.*)$", out, re.M).group(1))
    code, out, _ = run(capsys, "baseline", "eval", tmp_path / "s.json", corpus / "feats.serf")
    assert code == 0 and float(re.search(r"^accuracy=(.*)$", out, re.M).group(1)) == acc
    # the SVM mean-pools, so a different frame count is fine
    assert run(capsys, "extract", corpus / "wavs", tmp_path / "t44.serf", "--duration", 1.0)[0] == 0
    assert run(capsys, "baseline", "eval", tmp_path / "s.json", tmp_path / "t44.serf")[0] == 0
    assert run(capsys, "baseline", "eval", trained / "m.json", corpus / "feats.serf")[0] == 5
    code, out, _ = run(capsys, "predict", tmp_path / "s.json", corpus / "wavs" / "SYN_00000_angry.wav")
    assert code == 0 and out.strip() in EMOTIONS
