import numpy as np
import pytest

from neuroloop.decoder import DecoderModel, FeatureDef, ModelKind, SourceSet, SpatialFilter
from neuroloop.dsp import AlphaBand, BandSpec, CalibrationMap
from neuroloop.protocol import (
    Part, Phase, SessionLog, SessionPlan, build_experiment_plan, build_session_plan,
    experiment_scenario, offline_replay, run_experiment_part, run_session, session_duration,
    tick_times,
)
from neuroloop.signals import ChannelInfo, Recording, SynthScenario, generate_synthetic

FS = 512.0


def constant_model(value):
    f = FeatureDef(BandSpec(10), SpatialFilter(np.array([1.0])), SourceSet.EEG)
    return DecoderModel(ModelKind.CS2, [f] * 5, np.zeros(5), value, channels={"EEG": ("Pz",)})


def flat_source(plan, seed=0):
    n = int(session_duration(plan) * FS)
    return Recording(FS, [ChannelInfo("Pz", "EEG")], np.random.default_rng(seed).normal(size=(1, n)))


def test_plan_structure():
    plan = build_session_plan(3)
    conds = [p.condition for blk in plan.blocks for p in blk]
    assert len(plan.blocks) == 3 and len(conds) == 6
    assert conds.count("Up") == conds.count("Down") == 3
    assert all({a.condition, b.condition} == {"Up", "Down"} for a, b in plan.blocks)
    assert build_session_plan(3) == plan


def test_plan_order_is_fair():
    first_up = [build_session_plan(s).blocks[0][0].condition == "Up" for s in range(1000)]
    assert abs(np.mean(first_up) - 0.5) <= 0.05


def test_plan_rejects_unbalanced_block():
    with pytest.raises(ValueError):
        SessionPlan(((Phase("Up"), Phase("Up")),))


def test_session_duration():
    assert session_duration(build_session_plan(0)) == 260
    assert session_duration(build_session_plan(0, n_blocks=1)) == 80
    assert session_duration(build_session_plan(0, break_between_blocks=0)) == 240


def test_plan_round_trip():
    plan = build_session_plan(9)
    assert SessionPlan.from_dict(plan.to_dict()) == plan


def test_windows_timing():
    w = build_session_plan(0).windows()
    assert [x.active_start for x in w] == [5, 45, 95, 135, 185, 225]
    assert all(x.active_end - x.active_start == 35 for x in w)


def test_constant_control_session():
    plan = build_session_plan(1)
    log = run_session(plan, flat_source(plan), constant_model(0.4))
    np.testing.assert_allclose(log.altitude, 0.4)
    assert log.kind is ModelKind.CS2


def test_ticks_per_phase():
    plan = build_session_plan(1)
    log = run_session(plan, flat_source(plan), constant_model(0.0))
    assert log.n_ticks == 6 * 560
    for w in plan.windows():
        inside = (log.time >= w.active_start) & (log.time <= w.active_end)
        assert inside.sum() == 560
    # no ticks in instruction or break intervals
    assert np.all(~np.isnan(log.phase_time))
    assert np.all((log.phase_time >= 0) & (log.phase_time < 35))


def test_tick_rate():
    times, _ = tick_times(build_session_plan(0))
    assert np.allclose(np.diff(times[:560]), 1 / 16)


def test_source_exhausted():
    plan = build_session_plan(1)
    short = Recording(FS, [ChannelInfo("Pz", "EEG")], np.zeros((1, int(100 * FS))))
    with pytest.raises(ValueError, match="exhausted"):
        run_session(plan, short, constant_model(0.0))


def test_log_altitude_bounded():
    with pytest.raises(ValueError):
        plan = build_session_plan(0)
        SessionLog(plan, "CS1", np.zeros(1), np.ones(1), np.ones(1), np.array([1.5]), np.zeros(1), np.zeros(1))


def test_log_round_trip(tmp_path):
    plan = build_session_plan(1)
    log = run_session(plan, flat_source(plan), constant_model(-0.25), meta={"session": 1})
    log.save(tmp_path / "s.csv")
    back = SessionLog.load(tmp_path / "s.csv")
    assert back.kind is log.kind and back.plan == plan
    for field in ("time", "condition", "control", "altitude", "block", "phase_time"):
        np.testing.assert_allclose(getattr(back, field), getattr(log, field))
    assert back.meta["session"] == 1
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "time,condition,control,altitude"


def test_session_with_planted_effect_and_trained_model():
    from neuroloop.decoder import train_model
    train_plan = build_session_plan(2)
    sc = SynthScenario(seed=4, duration=1, alpha_amp_relax=10, alpha_amp_concentrate=2)
    from neuroloop.protocol import session_scenario
    train_rec = generate_synthetic(session_scenario(train_plan, sc, 4))
    model = train_model(train_rec, SourceSet.EEG)
    plan = build_session_plan(3)
    log = run_session(plan, sc.replace(seed=5), model)
    assert log.altitude[log.condition > 0].mean() > log.altitude[log.condition < 0].mean()


def test_experiment_plans():
    a, b = build_experiment_plan("A", 0), build_experiment_plan(Part.B, 0)
    assert len(a.sessions) == len(b.sessions) == 6
    assert a.kinds() == [ModelKind.CS1] * 6
    assert b.kinds() == [ModelKind.CS1] + [ModelKind.CS2] * 5
    assert not a.retrain_between_sessions and b.retrain_between_sessions
    assert a.first_session_control is ModelKind.CS1
    assert len({s.rng_seed for s in a.sessions}) == 6


@pytest.fixture(scope="module")
def part_b():
    plan = build_experiment_plan("B", 11)
    return run_experiment_part(plan, experiment_scenario(11))


def test_part_a_uses_cs1():
    plan = build_experiment_plan("A", 11)
    res = run_experiment_part(plan, experiment_scenario(11, channel_set="EEG16", emg_burst_amp=0.0))
    assert [log.kind for log in res.logs] == [ModelKind.CS1] * 6
    assert all(np.all(np.abs(log.altitude) <= 1) for log in res.logs)


def test_part_b_kinds_and_training_sizes(part_b):
    assert [log.kind for log in part_b.logs] == [ModelKind.CS1] + [ModelKind.CS2] * 5
    assert part_b.training_sizes == [6 * k for k in range(6)]


def test_part_b_no_leakage(part_b):
    digests = [r.digest() for r in part_b.recordings]
    for k, model in enumerate(part_b.models):
        if model.kind is ModelKind.CS2:
            assert set(model.training_digests) == set(digests[:k])
            assert digests[k] not in model.training_digests


def test_part_b_improves_on_session_one(part_b):
    def gap(log):
        return log.altitude[log.condition > 0].mean() - log.altitude[log.condition < 0].mean()
    assert np.mean([gap(log) for log in part_b.logs[1:]]) > 0


def test_experiment_deterministic(part_b):
    again = run_experiment_part(build_experiment_plan("B", 11), experiment_scenario(11))
    for a, b in zip(part_b.logs, again.logs):
        assert np.array_equal(a.altitude, b.altitude)


def test_offline_replay(part_b):
    plans = part_b.plan.sessions
    logs, models = offline_replay(plans, part_b.recordings, "CS2")
    assert len(logs) == 5
    for online, offline in zip(part_b.logs[1:], logs):
        np.testing.assert_array_equal(online.altitude, offline.altitude)
    logs4, models4 = offline_replay(plans, part_b.recordings, ModelKind.CS4)
    assert all(m.kind is ModelKind.CS4 for m in models4)


def test_offline_replay_needs_emg():
    plan = build_experiment_plan("B", 2)
    recs = [Recording(FS, [ChannelInfo("Pz", "EEG")], np.zeros((1, 10))) for _ in range(3)]
    with pytest.raises(KeyError, match="EMG"):
        offline_replay(plan.sessions[:3], recs, "CS3")


def test_fatigue_shrinks_alpha():
    from neuroloop.protocol import _scaled
    base = experiment_scenario(0)
    last = _scaled(base, 5, 6, 0.5)
    assert last.alpha_amp_relax == pytest.approx(0.5 * base.alpha_amp_relax)
    assert _scaled(base, 3, 6, 0.0) is base


def test_cs1_model_session_uses_alpha():
    plan = build_session_plan(0)
    model = DecoderModel(ModelKind.CS1, calibration=CalibrationMap(0.05, 1.0), alpha=AlphaBand(10))
    sc = SynthScenario(seed=1, duration=1, alpha_amp_relax=10, alpha_amp_concentrate=2)
    log = run_session(plan, sc, model)
    assert log.altitude[log.condition > 0].mean() > log.altitude[log.condition < 0].mean()
