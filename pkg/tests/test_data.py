import numpy as np
import pytest

from stochdiff.data import (
    DataError,
    ParseError,
    TimeSeries,
    WindowSpec,
    injected_drops,
    load_csv,
    load_dataset,
    sliding_windows,
    split,
    synth_generate,
    window_array,
    window_count,
    write_csv,
    zscore_fit_apply,
)


def _write(tmp_path, text, name="s.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_small_csv(tmp_path):
    ts = load_csv(_write(tmp_path, "a,b\n1,2\n3,4\n5.5,-6e-1\n"))
    assert ts.values.shape == (3, 2) and ts.columns == ["a", "b"]
    assert ts.values[2, 1] == -0.6


def test_parse_error_names_line(tmp_path):
    with pytest.raises(ParseError) as exc:
        load_csv(_write(tmp_path, "a,b\n1,2\n3,oops\n"))
    assert exc.value.line == 3 and ":3:" in str(exc.value)


def test_empty_file(tmp_path):
    with pytest.raises(DataError, match="empty"):
        load_csv(_write(tmp_path, ""))
    with pytest.raises(DataError, match="no data rows"):
        load_csv(_write(tmp_path, "a,b\n", "h.csv"))


def test_nan_rejected_or_forward_filled(tmp_path):
    p = _write(tmp_path, "a,b\n1,2\nnan,5\n3,inf\n")
    with pytest.raises(ParseError):
        load_csv(p)
    ts = load_csv(p, impute="ffill")
    np.testing.assert_array_equal(ts.values, [[1, 2], [1, 5], [3, 5]])


def test_time_and_column_selection(tmp_path):
    p = _write(tmp_path, "t,a,b\n0,1,2\n1,3,4\n")
    ts = load_csv(p, time_column="t")
    assert ts.columns == ["a", "b"] and ts.timestamps == ["0", "1"]
    assert load_csv(p, columns=["b"]).values[:, 0].tolist() == [2.0, 4.0]


def test_write_read_roundtrip(tmp_path):
    ts = TimeSeries(np.random.default_rng(0).standard_normal((5, 2)), ["u", "v"])
    write_csv(ts, tmp_path / "o.csv")
    back = load_csv(tmp_path / "o.csv")
    assert back.columns == ["u", "v"] and np.array_equal(back.values, ts.values)


def test_dataset_directory_sorted(tmp_path):
    _write(tmp_path, "a\n2\n", "b.csv")
    _write(tmp_path, "a\n1\n", "a.csv")
    assert [s.values[0, 0] for s in load_dataset(tmp_path)] == [1.0, 2.0]


def test_zscore_stats_and_roundtrip():
    rng = np.random.default_rng(1)
    train = TimeSeries(rng.normal(3, 2, (200, 3)))
    test = TimeSeries(rng.normal(3, 2, (50, 3)))
    ntrain, (ntest,), stats = zscore_fit_apply(train, [test])
    np.testing.assert_allclose(ntrain.values.mean(0), 0, atol=1e-9)
    np.testing.assert_allclose(ntrain.values.var(0), 1, atol=1e-9)
    np.testing.assert_allclose(stats.invert(ntest.values), test.values, rtol=0, atol=1e-12)
    # statistics come from training rows only
    np.testing.assert_allclose(stats.mean, train.values.mean(0), rtol=0, atol=1e-15)


def test_zscore_constant_dimension_flagged():
    v = np.column_stack([np.full(10, 4.0), np.arange(10.0)])
    out, _, stats = zscore_fit_apply(TimeSeries(v))
    assert stats.constant.tolist() == [True, False]
    np.testing.assert_array_equal(out.values[:, 0], 4.0)


def test_window_counts():
    assert window_count(10, WindowSpec(5, 2)) == 4
    assert len(sliding_windows(np.zeros((10, 1)), WindowSpec(5, 2))) == 4
    assert window_count(7, WindowSpec(5, 2)) == 1
    assert window_count(20, WindowSpec(5, 2, stride=3)) == (20 - 7) // 3 + 1
    with pytest.raises(DataError):
        sliding_windows(np.zeros((6, 1)), WindowSpec(5, 2))
    with pytest.raises(ValueError):
        WindowSpec(0, 1)
    spec = WindowSpec(50, 10)
    assert spec.span == 60


def test_windows_overlap_consistently():
    x = np.arange(30.0)[:, None]
    pairs = sliding_windows(x, WindowSpec(5, 3))
    for (o1, f1), (o2, f2) in zip(pairs, pairs[1:]):
        a, b = np.concatenate([o1, f1]), np.concatenate([o2, f2])
        assert np.array_equal(a[1:], b[:-1])
    arr = window_array(x, WindowSpec(5, 3))
    assert arr.shape == (len(pairs), 8, 1)


def test_temporal_split_and_no_leakage():
    ts = TimeSeries(np.arange(100.0))
    train, test = split(ts, 0.7)
    assert train.length == 70 and test.length == 30
    # every test window only carries values from rows 70..99
    for obs, fut in sliding_windows(test, WindowSpec(5, 2)):
        assert obs.min() >= 70 and fut.min() >= 70
    with pytest.raises(ValueError):
        split(ts, 1.0)


def test_subject_split_reproducible():
    series = [TimeSeries(np.full(3, float(i))) for i in range(10)]
    a_train, a_test = split(series, 0.7, seed=4)
    b_train, b_test = split(series, 0.7, seed=4)
    assert len(a_train) == 7 and len(a_test) == 3
    ids = lambda group: [s.values[0, 0] for s in group]  # noqa: E731
    assert ids(a_train) == ids(b_train)
    assert sorted(ids(a_train) + ids(a_test)) == list(range(10))


def test_sine_noiseless_is_periodic():
    ts = synth_generate("sine_noise", {"noise": 0.0, "period": 20, "length": 400})
    x = ts.values[:, 0] - ts.values[:, 0].mean()
    ac = np.array([np.dot(x[:-k], x[k:]) / (len(x) - k) for k in range(5, 40)])
    assert 5 + int(np.argmax(ac)) == 20
    np.testing.assert_allclose(ts.values[20:], ts.values[:-20], atol=1e-12)


def test_drop_signal_injected_depth():
    ts = synth_generate("drop_signal", {"drop_times": [50], "length": 200}, seed=1)
    a = ts.values[:, 0]
    assert a[51] / a[50] <= 0.6
    assert np.all(a > 0)
    assert injected_drops({"drop_times": [50]}) == [50]


def test_generators_deterministic():
    for kind in ("sine_noise", "regime_ar", "drop_signal"):
        a = synth_generate(kind, seed=3).values
        assert np.array_equal(a, synth_generate(kind, seed=3).values)
    assert not np.array_equal(synth_generate("regime_ar", seed=1).values, synth_generate("regime_ar", seed=2).values)
    assert synth_generate("regime_ar").values.shape == (2000, 4)


def test_generator_param_errors():
    with pytest.raises(ValueError):
        synth_generate("sine_noise", {"bogus": 1})
    with pytest.raises(ValueError):
        synth_generate("drop_signal", {"depth": 1.2})
    with pytest.raises(ValueError):
        synth_generate("walk")
