import math
from dataclasses import replace

import numpy as np
import pytest

from slora.analytic import TimingErrorModel, plan_slots, throughput_oob
from slora.errors import AccountingError, ConfigError
from slora.phy import LoRaPhyProfile, ReceptionThresholds
from slora.sim import (
    ChannelModel,
    FrameRecord,
    MacMode,
    Outcome,
    Phase,
    channel_gain,
    inject_timing_error,
    place_devices,
    resolve_receptions,
    run_simulation,
    scenario,
    simulate,
)
from slora.sim.engine import config_hash
from slora.uncertainty import SPEED_OF_LIGHT, DeploymentGeometry

PHY = LoRaPhyProfile()
TOA, TC = PHY.toa, PHY.t_c
TH = ReceptionThresholds()
IDEAL = ChannelModel.ideal()


# -- channel ------------------------------------------------------------------


def test_reference_loss_and_decade_rule():
    ch = ChannelModel(reference_distance_m=40.0, reference_loss_db=127.41, fading=False)
    assert channel_gain(40.0, None, ch) == pytest.approx(-113.41, abs=1e-12)
    # one decade costs 10 * n dB
    assert channel_gain(40.0, None, ch) - channel_gain(400.0, None, ch) == pytest.approx(30.0, abs=1e-12)


def test_default_reference_is_free_space_at_one_metre():
    ch = ChannelModel()
    assert ch.pl0_db == pytest.approx(31.22, abs=0.01)


def test_fading_power_has_unit_mean():
    rng = np.random.default_rng(3)
    ch = ChannelModel(reference_loss_db=0.0)
    lin = np.array([10 ** (channel_gain(1.0, rng, ch, 0.0) / 10) for _ in range(200_000)])
    assert abs(lin.mean() - 1.0) < 3 * lin.std() / math.sqrt(lin.size)


def test_fading_toggle_keeps_draws_aligned():
    a, b = np.random.default_rng(5), np.random.default_rng(5)
    channel_gain(100.0, a, ChannelModel(fading=False))
    channel_gain(100.0, b, ChannelModel(fading=True))
    assert a.random() == b.random()


def test_placement_moments():
    R = 6000.0
    g = DeploymentGeometry.disk(R)
    pos = place_devices(10**6, g, np.random.default_rng(1))
    r2 = (pos**2).sum(axis=1)
    assert abs(r2.mean() - R * R / 2) < 3 * r2.std() / math.sqrt(r2.size)
    d = np.sqrt(r2) / SPEED_OF_LIGHT
    assert abs(d.mean() - 2 / 3 * R / SPEED_OF_LIGHT) < 3 * d.std() / math.sqrt(d.size)
    one = place_devices(1, g, np.random.default_rng(2))
    assert one.shape == (1, 2) and np.hypot(*one[0]) <= R


@pytest.mark.parametrize("family", ["gaussian", "uniform"])
def test_timing_error_draws(family):
    rng = np.random.default_rng(9)
    m = TimingErrorModel(family, 1e-3)
    x = np.array([inject_timing_error(10.0, m, rng) - 10.0 for _ in range(200_000)])
    # standard error of the sample standard deviation from the fourth moment
    se = math.sqrt(np.var(x**2) / x.size) / (2 * 1e-3)
    assert abs(x.std() - 1e-3) < 3 * se
    if family == "uniform":
        assert np.all(np.abs(x) <= math.sqrt(3) * 1e-3)
    assert inject_timing_error(10.0, TimingErrorModel(family, 0.0), rng) == 10.0


# -- overlap rules ---------------------------------------------------------------


def frame(dev, start, power=-80.0):
    return FrameRecord(dev, 0, start, start, start, power)


def resolve(frames, channel=IDEAL, th=TH):
    return resolve_receptions(frames, th, PHY, channel)


def test_separated_frames_both_succeed():
    assert resolve([frame(0, 0.0), frame(1, TOA + 1e-3)]) == [Outcome.SUCCESS, Outcome.SUCCESS]


def test_back_to_back_frames_do_not_collide():
    assert resolve([frame(0, 0.0), frame(1, TOA)]) == [Outcome.SUCCESS, Outcome.SUCCESS]


def test_short_overlap_costs_only_the_earlier_frame():
    b_start = TOA - TC / 2
    assert resolve([frame(0, 0.0), frame(1, b_start)]) == [Outcome.CRC_ERROR, Outcome.SUCCESS]


def test_long_overlap_loses_both():
    assert resolve([frame(0, 0.0), frame(1, TOA - 2 * TC)]) == [Outcome.CRC_ERROR, Outcome.DROPPED]


def test_capture_rescues_stronger_frame():
    ch = ChannelModel(fading=False, noise=False, capture=True)
    out = resolve([frame(0, 0.0, -80.0), frame(1, TOA - 2 * TC, -70.0)], ch)
    assert out == [Outcome.CRC_ERROR, Outcome.SUCCESS]


def test_same_slot_equal_power_both_lost():
    ch = ChannelModel(fading=False, noise=False, capture=True)
    out = resolve([frame(0, 5.0), frame(1, 5.0)], ch)
    assert all(o is not Outcome.SUCCESS for o in out)


def test_capture_against_aggregate_interference():
    ch = ChannelModel(fading=False, noise=False, capture=True)
    # 2 dB above each interferer, but below their sum (+3 dB)
    out = resolve([frame(0, 0.0, -78.0), frame(1, 0.0, -80.0), frame(2, 0.0, -80.0)], ch)
    assert out[0] is not Outcome.SUCCESS


def test_below_noise_frames_neither_decode_nor_interfere():
    ch = ChannelModel(fading=False, noise=True, capture=False)
    weak = -117.03 - 6.0 - 1.0
    out = resolve([frame(0, 0.0, -80.0), frame(1, 0.01, weak)], ch)
    assert out == [Outcome.SUCCESS, Outcome.BELOW_NOISE]


def test_outcome_is_set_once():
    f = frame(0, 0.0)
    resolve([f])
    with pytest.raises(AccountingError):
        f.set_outcome(Outcome.SUCCESS)


def test_preamble_tolerance_off_makes_any_overlap_fatal():
    out = resolve([frame(0, 0.0), frame(1, TOA - 1e-4)], ChannelModel.ideal(preamble_tolerance=False))
    assert out == [Outcome.CRC_ERROR, Outcome.DROPPED]


# -- engine ---------------------------------------------------------------------


def small(**kw):
    base = dict(n_devices=40, duration_s=600.0, seed=3)
    base.update(kw)
    return scenario(**base)


def test_determinism_bit_identical():
    cfg = small(sigma_s=7.6e-4)
    a, b = run_simulation(cfg), run_simulation(cfg)
    assert a == b
    assert config_hash(cfg) == a.run_meta["config_hash"]


def test_different_seed_differs():
    assert run_simulation(small(seed=1)).counts != run_simulation(small(seed=2)).counts


@pytest.mark.parametrize("mode", list(MacMode))
def test_conservation_ledger(mode):
    run = simulate(small(mac_mode=mode, offered_load=1.0))
    c = run.outcome_counts()
    assert run.generated == sum(c.values()) + run.queued_at_end
    assert len(run.frames) == sum(c.values())
    assert all(f.outcome is not None for f in run.frames)


def test_slot_legality_without_timing_error():
    cfg = small(sigma_s=0.0, offered_load=0.5, channel=IDEAL)
    run = simulate(cfg)
    slot = TOA + cfg.plan.guard_time_s
    t_sync = cfg.plan.t_sync_s
    assert run.frames
    for f in run.frames:
        k = math.floor(f.actual_start_s / t_sync + 1e-12)
        phase_start = k * t_sync
        idx = (f.actual_start_s - phase_start) / slot
        assert f.actual_start_s == f.nominal_start_s
        assert abs(idx - f.slot_index) < 1e-9
        assert 0 <= f.slot_index < cfg.plan.slot_count


def test_messages_wait_for_two_sync_events():
    cfg = small(sigma_s=7.6e-4, offered_load=0.5)
    t_sync = cfg.plan.t_sync_s
    for f in simulate(cfg).frames:
        second_sync = (math.floor(f.generated_s / t_sync) + 2) * t_sync
        assert f.nominal_start_s >= second_sync - 1e-9


def test_injected_error_is_the_only_offset():
    cfg = small(sigma_s=1e-3, offered_load=0.5)
    errs = np.array([f.timing_error_s for f in simulate(cfg).frames])
    assert abs(errs.mean()) < 4 * 1e-3 / math.sqrt(errs.size)
    assert errs.std() == pytest.approx(1e-3, rel=0.1)


def test_phase_transitions_follow_protocol():
    run = simulate(small(sigma_s=0.0), log_phases=True)
    allowed = {
        (Phase.SLEEP, Phase.SYNCING),
        (Phase.SYNCING, Phase.TX_PHASE),
        (Phase.TX_PHASE, Phase.SLEEP),
        (Phase.TX_PHASE, Phase.SYNCING),
    }
    assert run.phase_log
    for _, _, old, new in run.phase_log:
        assert (old, new) in allowed


def test_duty_cycle_respected_at_the_limit():
    cfg = scenario(n_devices=100, duration_s=1200.0, seed=4, mac_mode="PureAloha")
    rep = run_simulation(cfg)
    measured = rep.run_meta["measured_s"]
    airtime = np.array([d.offered * TOA / measured for d in rep.per_device])
    lam = 0.0033 * measured / TOA
    assert abs(airtime.mean() - 0.0033) < 3 * 0.0033 / math.sqrt(lam * airtime.size)
    assert airtime.max() <= 0.0033 * (1 + 5 / math.sqrt(lam))


def test_capture_threshold_monotone():
    s = []
    for thr in (-3.0, 1.0, 6.0, 20.0, 100.0):
        th = ReceptionThresholds(sir_capture_threshold_db=thr)
        s.append(run_simulation(small(sigma_s=7.6e-4, offered_load=1.0, thresholds=th)).normalized_throughput)
    assert all(b <= a for a, b in zip(s, s[1:]))
    assert s[0] > s[-1]


def test_device_streams_are_independent_of_population():
    a = simulate(small(n_devices=10))
    b = simulate(small(n_devices=20))
    assert [d.position for d in a.devices] == [d.position for d in b.devices[:10]]


def test_single_device_without_contention():
    rep = run_simulation(scenario(n_devices=1, duration_s=3600.0, channel=IDEAL, seed=2))
    assert rep.der == 1.0
    assert rep.jain == 1.0


def test_report_identities():
    rep = run_simulation(small(offered_load=0.8, sigma_s=7.6e-4))
    assert 0 <= rep.der <= 1
    assert 1 / 40 <= rep.jain <= 1
    assert sum(b.attempts for b in rep.distance_bins) == rep.counts["window_transmitted"]
    assert rep.normalized_throughput == pytest.approx(rep.der * rep.offered_airtime, rel=1e-12)


def test_config_validation():
    cfg = small()
    with pytest.raises(ConfigError):
        simulate(replace(cfg, warmup_s=cfg.sim_duration_s))
    with pytest.raises(ConfigError):
        simulate(replace(cfg, phy=LoRaPhyProfile(sf=8)))
    with pytest.raises(ConfigError):
        simulate(small(offered_load=2.0, enforce_duty_cycle=True))
    with pytest.raises(ConfigError):
        simulate(replace(cfg, plan=plan_slots(60.0, 0.1, 0.0)))


def test_slotted_ideal_tracks_model_quickly():
    vals = [run_simulation(scenario(offered_load=1.0, sigma_s=0.0, guard_time_s=0.0, channel=IDEAL, seed=s))
            for s in range(3)]
    cfg = scenario(offered_load=1.0, sigma_s=0.0, guard_time_s=0.0)
    model = throughput_oob(1.0, cfg.plan, TOA)
    assert np.mean([v.normalized_throughput for v in vals]) == pytest.approx(model, rel=0.05)
