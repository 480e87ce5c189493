"""Smoke test for the tempokit extension module.

Build and install first:
    pip install maturin
    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/tempokit-*.whl
"""

import json
import os
import tempfile

import tempokit


def main():
    assert tempokit.acc1(104.0, 100.0) and not tempokit.acc1(105.0, 100.0)
    assert tempokit.acc2(60.0, 120.0) and not tempokit.acc2(90.0, 120.0)
    assert len(tempokit.methods()) == 7

    act, beats = tempokit.synthetic_activation(120.0, duration=20.0, noise_std=0.05, seed=3)
    for method in ["acf-estimate", "comb-estimate", "dbn-estimate", "crf-infer", "dbn-infer", "comb-infer"]:
        est = tempokit.estimate_tempo(act, fps=100.0, method=method)
        assert tempokit.acc1(est.bpm, 120.0), (method, est)
    tracked = tempokit.track_beats(act, decoder="dbn")
    assert abs(len(tracked) - len(beats)) <= 2

    try:
        tempokit.estimate_tempo(act, method="nope")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown method accepted")

    samples, click_beats = tempokit.click_track(100.0, duration=6.0)
    assert len(samples) == 6 * 44100 and len(click_beats) == 10
    frames = tempokit.spectrogram(samples)
    assert len(frames) == 600 and len(frames[0]) == 81

    model = tempokit.Model.init(seed=7)
    assert model.num_parameters == 6496 + 10 * 1296 + 17 + 5100
    assert model.receptive_field == 8189
    pred = model.predict(samples)
    assert len(pred.beat_activation) == 600
    assert abs(sum(pred.tempo_activation) - 1.0) < 1e-6
    assert pred.tempo("direct").bpm > 0

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "m.tcnw")
        model.save(path)
        again = tempokit.Model.load(path)
        assert again.predict(samples).beat_activation == pred.beat_activation
        with open(path, "r+b") as f:
            f.seek(100)
            byte = f.read(1)
            f.seek(100)
            f.write(bytes([byte[0] ^ 1]))
        try:
            tempokit.Model.load(path)
        except tempokit.TempokitError as e:
            assert "checksum" in str(e)
        else:
            raise AssertionError("corrupted weights loaded")

    train, test = tempokit.split([f"c{i:03d}" for i in range(360)])
    assert (len(train), len(test)) == (288, 72)

    print(json.dumps({"ok": True, "direct_bpm": round(pred.tempo("direct").bpm, 2)}))


if __name__ == "__main__":
    main()
