import numpy as np
import pytest

import watchhar


def test_presets():
    assert watchhar.preset_names() == ["samosa-1k", "seminat-22k"]


def test_f16_roundtrip():
    out = watchhar.to_f16_roundtrip(np.array([1.0, 0.5, -2.0, 0.0], dtype=np.float32))
    assert out.tolist() == [1.0, 0.5, -2.0, 0.0]
    x = np.array([0.1], dtype=np.float32)
    assert watchhar.to_f16_roundtrip(x)[0] == np.float32(np.float16(0.1))
    with pytest.raises(watchhar.OverflowError):
        watchhar.to_f16_roundtrip(np.array([70000.0], dtype=np.float32))


def test_power_stft_against_numpy():
    rng = np.random.default_rng(0)
    audio = rng.standard_normal(1000).astype(np.float32)
    power = watchhar.power_stft(audio, "samosa-1k")
    assert power.shape == (63, 129)
    padded = np.pad(audio.astype(np.float64), 128, mode="reflect")
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(256) / 256)
    for i in (0, 31, 62):
        ref = np.abs(np.fft.rfft(padded[i * 16 : i * 16 + 256] * window)) ** 2
        assert np.max(np.abs(power[i] - ref)) <= 1e-4 * ref.max()


def test_logmel_shapes():
    assert watchhar.logmel(np.zeros(1000, np.float32) + 0.01, "samosa-1k").shape == (63, 64)
    assert watchhar.logmel(np.zeros(220500, np.float32) + 0.01, "seminat-22k").shape == (690, 64)


def test_metrics():
    pred = [True] * 8 + [True] * 2 + [False] * 2
    truth = [True] * 8 + [False] * 2 + [True] * 2
    assert watchhar.binary_f1(pred, truth) == pytest.approx(0.8)
    assert watchhar.weighted_f1([0, 0, 0, 0], [0, 0, 0, 1]) == pytest.approx(0.75 * (2 * 0.75 / 1.75))
    per, mean, pooled = watchhar.context_accuracy([1, 0], [1, 1], ["a", "b"])
    assert per == {"a": 1.0, "b": 0.0} and mean == 0.5 and pooled == 0.5


def test_fixtures_end_to_end(tmp_path):
    names = watchhar.write_fixtures(tmp_path, 7)
    assert "model_energy.whar" in names
    archive = watchhar.WeightArchive.read(tmp_path / "model_energy.whar")
    half = archive.quantize_f16()
    assert abs(half.payload_bytes / archive.payload_bytes - 0.5) < 0.01
    half.write(tmp_path / "half.whar")
    assert watchhar.WeightArchive.read(tmp_path / "half.whar") == half

    model = watchhar.Model.load(tmp_path / "model_energy.whar")
    assert len(model.class_names) == 8
    logits, predicted = model.classify(np.zeros((1, 50, 6), np.float32), np.zeros(1000, np.float32))
    assert logits.shape == (8,) and 0 <= predicted < 8
    assert model.detect(np.zeros((6, 150), np.float32)) < 1e-6

    events = watchhar.run_session(
        model, tmp_path / "planted.imu.csv", tmp_path / "planted.wav", tmp_path / "planted.labels.csv"
    )
    gates = [(e["kind"], e["t_ms"]) for e in events if e["kind"].startswith("gate")]
    assert [k for k, _ in gates] == ["gate_on", "gate_off"]
    assert 10000 < gates[0][1] <= 18000 < gates[1][1]
    classified = [e["t_ms"] for e in events if e["kind"] == "classifier"]
    assert classified and all(gates[0][1] < t < gates[1][1] for t in classified)


def test_missing_archive(tmp_path):
    with pytest.raises(watchhar.IoError):
        watchhar.WeightArchive.read(tmp_path / "missing.whar")
