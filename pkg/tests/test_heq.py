import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from robustfe import heq
from robustfe.frontend import FeatureKind, FeatureSequence


def test_two_point_table():
    t = heq.build_table([0.0, 1.0], 2)
    assert t.breakpoints == [(0.5, 0.5), (1.0, 1.0)]


def test_too_few_samples():
    with pytest.raises(heq.EstimationError):
        heq.build_table([1.0], 10)
    with pytest.raises(heq.EstimationError):
        heq.build_tables(np.zeros((1, 3)))


def test_self_equalisation_is_identity_at_breakpoints(rng):
    t = heq.build_table(rng.normal(size=500), 100)
    np.testing.assert_array_equal(heq.equalize(t.values, t, t), t.values)


def test_shift_is_recovered(rng):
    x = rng.normal(size=4000)
    c = 2.5
    ref, test = heq.build_table(x, 100), heq.build_table(x + c, 100)
    y = test.values[5:-5]
    np.testing.assert_allclose(heq.equalize(y, test, ref), y - c, atol=1e-9)


def test_linear_extrapolation_and_scalar():
    test = heq.QuantileTable([0.0, 1.0, 2.0])
    ref = heq.QuantileTable([10.0, 12.0, 16.0])
    assert heq.equalize(-1.0, test, ref) == pytest.approx(8.0)
    assert heq.equalize(3.0, test, ref) == pytest.approx(20.0)
    assert isinstance(heq.equalize(0.5, test, ref), float)


def test_tied_test_values_collapse():
    test = heq.QuantileTable([0.0, 0.0, 0.0, 1.0])
    ref = heq.QuantileTable([1.0, 2.0, 3.0, 4.0])
    assert heq.equalize(0.0, test, ref) == pytest.approx(2.0)
    assert heq.equalize(1.0, test, ref) == pytest.approx(4.0)
    const = heq.QuantileTable([5.0, 5.0])
    assert heq.equalize(7.0, const, heq.QuantileTable([1.0, 3.0])) == pytest.approx(2.0)


def test_mismatched_table_sizes():
    with pytest.raises(ValueError):
        heq.equalize(0.0, heq.QuantileTable([0.0, 1.0]), heq.QuantileTable([0.0]))


def test_self_drawn_sequence_barely_moves(rng):
    ref = heq.build_tables(rng.normal(size=(20000, 2)), 100)
    seq = FeatureSequence(rng.normal(size=(3000, 2)), FeatureKind.MFCC)
    out = heq.equalize_sequence(seq, ref)
    gap = np.median(np.diff(ref[0].values))
    assert np.median(np.abs(out.frames - seq.frames)) < gap


def test_given_mode(rng):
    frames = rng.normal(3.0, 2.0, (500, 2))
    ref = heq.build_tables(rng.normal(size=(500, 2)), 50)
    test = heq.build_tables(frames, 50)
    seq = FeatureSequence(frames, FeatureKind.MFCC)
    a = heq.equalize_sequence(seq, ref, "given", test)
    b = heq.equalize_sequence(seq, ref, "per-utterance")
    np.testing.assert_array_equal(a.frames, b.frames)
    with pytest.raises(ValueError):
        heq.equalize_sequence(seq, ref, "given")
    with pytest.raises(ValueError):
        heq.equalize_sequence(seq, ref[:1])


def test_tables_roundtrip(tmp_path, rng):
    tables = heq.build_tables(rng.normal(size=(300, 4)), 100)
    heq.save_tables(tmp_path / "q.rftq", tables)
    back = heq.load_tables(tmp_path / "q.rftq")
    assert len(back) == 4
    for a, b in zip(tables, back):
        np.testing.assert_allclose(a.values, b.values, rtol=1e-6, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, st.integers(2, 300), elements=st.floats(-1e3, 1e3)),
    arrays(np.float64, st.integers(2, 300), elements=st.floats(-1e3, 1e3)),
    st.integers(1, 50),
)
def test_equalize_is_monotone(test_samples, ref_samples, n):
    test, ref = heq.build_table(test_samples, n), heq.build_table(ref_samples, n)
    grid = np.linspace(-2e3, 2e3, 301)
    assert np.all(np.diff(heq.equalize(grid, test, ref)) >= -1e-9)
