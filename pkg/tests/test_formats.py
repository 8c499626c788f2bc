import struct

import numpy as np
import pytest

from robustfe import formats, heq
from robustfe.compensation import SpliceModel, StereoBatch, train_msplice
from robustfe.formats import FormatError
from robustfe.frontend import AudioBuffer, FeatureKind, FeatureSequence
from robustfe.gmm import GaussianMixture
from robustfe.mllr import MllrTransform
from robustfe.nmf import Dictionary


def test_feature_archive_roundtrip_and_layout(rng):
    seq = FeatureSequence(rng.normal(size=(7, 3)), FeatureKind.COMPOSITE)
    blob = formats.features_to_bytes(seq)
    assert blob[:4] == b"RFT1"
    assert struct.unpack("<4I", blob[4:20]) == (7, 3, int(FeatureKind.COMPOSITE), 10000)
    assert len(blob) == 20 + 4 * 21
    back = formats.read_features(blob)
    assert back.kind == FeatureKind.COMPOSITE and back.frame_period_ms == 10.0
    np.testing.assert_allclose(back.frames, seq.frames, rtol=1e-6)
    # frames are stored row-major
    assert np.frombuffer(blob[20:24], "<f4")[0] == np.float32(seq.frames[0, 0])
    assert np.frombuffer(blob[24:28], "<f4")[0] == np.float32(seq.frames[0, 1])


def test_empty_archive(tmp_path):
    seq = FeatureSequence(np.zeros((0, 23)), FeatureKind.LMFB)
    formats.write_features(tmp_path / "e.rft", seq)
    assert formats.read_features(tmp_path / "e.rft").frames.shape == (0, 23)


def test_dictionary_is_column_major(tmp_path):
    w = np.arange(6, dtype=float).reshape(3, 2)
    blob = formats.dictionary_to_bytes(w, 42)
    assert struct.unpack("<2IQ", blob[4:20]) == (3, 2, 42)
    np.testing.assert_array_equal(np.frombuffer(blob[20:], "<f4"), [0, 2, 4, 1, 3, 5])
    Dictionary(w, 42).save(tmp_path / "w.rftw")
    back = Dictionary.load(tmp_path / "w.rftw")
    assert back.iterations_trained == 42
    np.testing.assert_array_equal(back.basis, w)


def test_other_containers_roundtrip(tmp_path, rng):
    tables = heq.build_tables(rng.normal(size=(50, 3)), 10)
    heq.save_tables(tmp_path / "q.rftq", tables)
    assert len(heq.load_tables(tmp_path / "q.rftq")) == 3
    t = MllrTransform(rng.normal(size=(2, 3)))
    t.save(tmp_path / "t.rftm")
    np.testing.assert_allclose(MllrTransform.load(tmp_path / "t.rftm").matrix, t.matrix, rtol=1e-6)
    g = GaussianMixture(np.array([0.25, 0.75]), rng.normal(size=(2, 2)), np.ones((2, 2)))
    y = g.sample(200, rng)[0]
    model = train_msplice(StereoBatch(y * 2, y), g)
    model.save(tmp_path / "m.rfts")
    back = SpliceModel.load(tmp_path / "m.rfts")
    np.testing.assert_allclose(back.transforms, model.transforms, rtol=1e-5)
    np.testing.assert_allclose(back.clean_means, model.clean_means, rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("reader", [
    formats.read_features, formats.read_dictionary_raw, formats.read_quantiles_raw,
    formats.read_transform_raw, formats.read_splice_raw,
])
def test_bad_magic(reader):
    with pytest.raises(FormatError, match="magic"):
        reader(b"NOPE" + bytes(64))


def test_bad_gmm_magic_and_truncation(rng):
    g = GaussianMixture(np.ones(1), np.zeros((1, 2)), np.ones((1, 2)))
    blob = g.to_bytes()
    with pytest.raises(FormatError):
        GaussianMixture.from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(FormatError, match="truncated"):
        GaussianMixture.from_bytes(blob[:-3])
    seq = FeatureSequence(rng.normal(size=(4, 2)), FeatureKind.MFCC)
    with pytest.raises(FormatError, match="truncated"):
        formats.read_features(formats.features_to_bytes(seq)[:-1])


def test_unknown_codes():
    with pytest.raises(FormatError, match="kind"):
        formats.read_features(b"RFT1" + struct.pack("<4I", 0, 1, 9, 10000))
    with pytest.raises(FormatError):
        formats.transform_to_bytes(np.zeros((2, 2)))


def test_csv_and_pgm(tmp_path):
    formats.write_csv(tmp_path / "a.csv", [[1.0, 2.5], [3.0, 4.0]], header="a,b")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines == ["a,b", "1,2.5", "3,4"]
    counts = np.array([[0.0, 10.0], [100.0, 0.0]])
    formats.write_pgm(tmp_path / "c.pgm", counts)
    raw = (tmp_path / "c.pgm").read_bytes()
    assert raw.startswith(b"P5\n2 2\n255\n")
    pix = np.frombuffer(raw[len(b"P5\n2 2\n255\n"):], np.uint8).reshape(2, 2)
    assert pix[1, 0] == 0 and pix[0, 0] == 255
    assert 0 < pix[0, 1] < 255


def test_wav_roundtrip_and_errors(tmp_path, rng):
    audio = AudioBuffer(rng.uniform(-0.5, 0.5, 1000), 8000)
    formats.write_wav(tmp_path / "a.wav", audio)
    back = formats.read_wav(tmp_path / "a.wav")
    assert back.sample_rate == 8000
    assert np.abs(back.samples - audio.samples).max() <= 0.5 / 32768 + 1e-12
    (tmp_path / "bad.wav").write_bytes(b"RIFF0000garbage")
    with pytest.raises(FormatError):
        formats.read_wav(tmp_path / "bad.wav")
    with pytest.raises(OSError):
        formats.read_wav(tmp_path / "absent.wav")
