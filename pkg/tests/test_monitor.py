import numpy as np
import pytest

from stochdiff.data import TimeSeries, WindowSpec, injected_drops, synth_generate
from stochdiff.monitor import (
    CausalView,
    LookAheadError,
    OracleForecaster,
    alert_records,
    detect_drops,
    group_events,
    simulate_stream,
    summarize,
)

DROP_PARAMS = {"length": 400, "interval": 60, "jitter": 5, "noise": 0.01}
SPEC = WindowSpec(20, 5)


def test_detect_examples():
    assert detect_drops(np.ones(20)) == []
    (flag,) = detect_drops([1.0, 0.6])
    assert flag[0] == 1 and flag[1] == pytest.approx(0.4)
    # 0.3 is not strictly above the threshold
    assert detect_drops([1.0, 0.7]) == []
    with pytest.raises(ValueError):
        detect_drops([1.0, 0.0])


def test_detect_uses_trailing_window():
    a = [2.0, 1.0, 1.0, 1.0, 0.65]
    assert [t for t, _ in detect_drops(a)] == [1, 2, 3, 4]
    # steps 1 and 2 still see the 2.0; step 3 does not
    assert [t for t, _ in detect_drops(a, window=2)] == [1, 2, 4]
    assert detect_drops([10.0, 7.0]) == [] and detect_drops([0.1, 0.07]) == []


def test_detect_scale_invariant():
    a = synth_generate("drop_signal", DROP_PARAMS, seed=2).values[:, 0]
    base = detect_drops(a, window=20)
    scaled = detect_drops(37.5 * a, window=20)
    assert [t for t, _ in base] == [t for t, _ in scaled]
    np.testing.assert_allclose([f for _, f in base], [f for _, f in scaled], rtol=1e-12)


def test_group_events():
    evs = group_events([(3, 0.4), (4, 0.5), (9, 0.35)])
    assert [(e.start, e.end) for e in evs] == [(3, 4), (9, 9)]
    assert evs[0].max_drop == 0.5


def _oracle_run(seed=0, spec=SPEC, **kw):
    ts = synth_generate("drop_signal", DROP_PARAMS, seed=seed)
    return ts, simulate_stream(OracleForecaster(ts.values), ts, spec, **kw)


@pytest.mark.parametrize("point_mode", ["gmm", "median"])
def test_oracle_alerts_match_ground_truth(point_mode):
    ts, res = _oracle_run(point_mode=point_mode)
    a = ts.values[:, 0]
    truth = [t for t, _ in detect_drops(a, 0.30, window=20) if t >= 20]
    assert [al.target_step for al in res.alerts] == truth
    assert len(truth) > 0
    for al in res.alerts:
        assert 0 < al.horizon_ahead <= 5 and al.drop > 0.30
    # every injected drop inside the replay is caught
    reach = [t + 1 for t in injected_drops(DROP_PARAMS, seed=0) if t + 1 >= 20]
    assert set(reach) <= {al.target_step for al in res.alerts}


def test_alerts_deduplicated_keep_earliest_issue():
    _, res = _oracle_run(spec=WindowSpec(20, 5))
    targets = [al.target_step for al in res.alerts]
    assert len(targets) == len(set(targets))
    # with a 5-step horizon the earliest possible issue is target - 5
    assert all(al.issue_step == al.target_step - 5 for al in res.alerts if al.target_step >= 25)


def test_causality_audit():
    _, res = _oracle_run()
    assert res.reads and all(furthest <= issue for issue, furthest in res.reads.items())
    view = CausalView(np.arange(10.0))
    view.read(0, 4, issue_step=3)
    with pytest.raises(LookAheadError):
        view.read(0, 5, issue_step=3)


def test_leaky_forecaster_cannot_see_future():
    ts = synth_generate("drop_signal", DROP_PARAMS, seed=1)
    seen = []

    def spy(observed, issue, horizon):
        seen.append((issue, observed.copy()))
        return np.ones((2, horizon, 1))

    simulate_stream(spy, ts, WindowSpec(20, 5, stride=10))
    assert seen
    for issue, obs in seen:
        np.testing.assert_array_equal(obs, ts.values[issue - 19 : issue + 1])


def test_flat_series_no_alerts():
    ts = synth_generate("sine_noise", {"length": 200, "offset": 5.0, "amplitude": 0.05, "noise": 0.01}, seed=0)

    def tight(observed, issue, horizon):
        rng = np.random.default_rng(issue)
        return observed[-1] * (1 + 0.02 * rng.standard_normal((20, horizon, 1)))

    res = simulate_stream(tight, ts, WindowSpec(20, 5))
    assert res.alerts == []


def test_summary_and_records():
    ts, res = _oracle_run()
    events = summarize(res.alerts, ts.values[:, 0], 0.30, 20)
    assert events and all(e.detected and e.lead_time > 0 for e in events)
    recs = alert_records(res.alerts)
    assert set(recs[0]) == {"issue_step", "target_step", "drop", "reference"}


def test_bad_inputs():
    ts = TimeSeries(np.ones(10))
    with pytest.raises(ValueError):
        simulate_stream(OracleForecaster(ts.values), ts, WindowSpec(10, 2))
    with pytest.raises(ValueError):
        simulate_stream(OracleForecaster(ts.values), ts, WindowSpec(3, 2), point_mode="mean")
    with pytest.raises(ValueError):
        simulate_stream(None, ts, WindowSpec(3, 2))
