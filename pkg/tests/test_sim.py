import numpy as np
import pytest

from headway_lab.sim import (ConfigError, DispatchSchedule,
                             check_log_invariants, derived_schedules,
                             generate_dataset, log_to_csv, logs_from_csv,
                             simulate_replication)

from conftest import tiny_line_config


def even_schedule(direction, start, headway, n):
    return DispatchSchedule(direction, tuple(start + headway * i for i in range(n)))


def first_nb_events(log, train_ids):
    """Earliest NB event per train id."""
    firsts = {}
    for ev in log.events:
        if ev.direction == "NB" and ev.train_id in train_ids:
            if ev.train_id not in firsts or ev.timestamp < firsts[ev.train_id].timestamp:
                firsts[ev.train_id] = ev
    return firsts


class TestLineConfig:
    def test_rejects_bad_block_length(self):
        with pytest.raises(ConfigError):
            tiny_line_config(block_length=0.0)
        with pytest.raises(ConfigError):
            tiny_line_config(block_length=1e9)

    def test_rejects_unsorted_stations(self):
        with pytest.raises(ConfigError):
            tiny_line_config(station_positions=(5000.0, 4000.0))

    def test_rejects_bad_fraction_and_window(self):
        with pytest.raises(ConfigError):
            tiny_line_config(short_turn_fraction=1.5)
        with pytest.raises(ConfigError):
            tiny_line_config(service_start=61000.0)

    def test_short_turn_position_required_with_fraction(self):
        with pytest.raises(ConfigError):
            tiny_line_config(short_turn_position=None, short_turn_fraction=0.5)


class TestSimulateReplication:
    def test_no_short_turn_three_sb_trains(self):
        config = tiny_line_config(short_turn_fraction=0.0, short_turn_position=None)
        nb = even_schedule("NB", 54600.0, 300.0, 2)
        sb = even_schedule("SB", 54600.0, 300.0, 3)
        log = simulate_replication(config, (nb, sb), seed=1)
        sb_ids = {ev.train_id for ev in log.events if ev.direction == "SB"}
        assert len(sb_ids) == 3
        # every SB train traverses all blocks, none re-enters NB
        n_blocks = config.n_blocks
        for tid in sb_ids:
            blocks = {ev.block_id for ev in log.events
                      if ev.train_id == tid and ev.direction == "SB"}
            assert blocks == set(range(n_blocks))
        nb_ids = {ev.train_id for ev in log.events if ev.direction == "NB"}
        assert nb_ids.isdisjoint(sb_ids)

    def test_determinism_byte_identical(self):
        config = tiny_line_config()
        scheds = derived_schedules(config, 11, 300.0, 45.0)
        a = simulate_replication(config, scheds, seed=11)
        b = simulate_replication(config, scheds, seed=11)
        assert log_to_csv(a) == log_to_csv(b)

    def test_half_of_ten_sb_trains_short_turn(self):
        config = tiny_line_config(short_turn_fraction=0.5,
                                  service_end=70000.0)
        nb = even_schedule("NB", 54600.0, 400.0, 4)
        sb = even_schedule("SB", 54600.0, 400.0, 10)
        log = simulate_replication(config, (nb, sb), seed=5)
        sb_ids = {ev.train_id for ev in log.events if ev.direction == "SB"}
        firsts = first_nb_events(log, sb_ids)
        assert len(firsts) == 5
        assert all(ev.distance == config.short_turn_position for ev in firsts.values())

    def test_invariants_and_conservation(self):
        config = tiny_line_config()
        scheds = derived_schedules(config, 2, 300.0, 45.0)
        log = simulate_replication(config, scheds, seed=2)
        check_log_invariants(log, config)
        nb_sched, sb_sched = scheds
        n_sb = len(sb_sched.departure_times)
        expected_turns = int(np.floor(n_sb * config.short_turn_fraction))
        nb_entering = {ev.train_id for ev in log.events if ev.direction == "NB"}
        assert len(nb_entering) == len(nb_sched.departure_times) + expected_turns

    def test_infeasible_schedule_rejected_with_pair(self):
        config = tiny_line_config()
        bad = DispatchSchedule("SB", (54600.0, 54650.0))
        nb = even_schedule("NB", 54600.0, 300.0, 2)
        with pytest.raises(ConfigError, match="54650"):
            simulate_replication(config, (nb, bad), seed=0)

    def test_merge_respects_nb_separation(self):
        # dense NB service against short-turned SB trains at the merge block
        config = tiny_line_config(short_turn_fraction=1.0)
        nb = even_schedule("NB", 54600.0, 120.0, 12)
        sb = even_schedule("SB", 54600.0, 120.0, 12)
        log = simulate_replication(config, (nb, sb), seed=3)
        check_log_invariants(log, config)


class TestGenerateDataset:
    def test_batch_of_one_matches_direct_call(self):
        config = tiny_line_config()
        logs = generate_dataset(config, 1, base_seed=7, even_headway=300.0,
                                jitter_sd=45.0)
        direct = simulate_replication(
            config, derived_schedules(config, 7, 300.0, 45.0), 7, replication_id=0)
        assert log_to_csv(logs[0]) == log_to_csv(direct)

    def test_fifty_distinct_replication_ids(self):
        config = tiny_line_config()
        logs = generate_dataset(config, 50, base_seed=0, even_headway=300.0,
                                jitter_sd=30.0)
        assert [log.replication_id for log in logs] == list(range(50))

    def test_zero_jitter_shares_departures(self):
        config = tiny_line_config()
        scheds = [derived_schedules(config, seed, 300.0, 0.0) for seed in range(4)]
        nb_times = {s[0].departure_times for s in scheds}
        sb_times = {s[1].departure_times for s in scheds}
        assert len(nb_times) == 1 and len(sb_times) == 1

    def test_rejects_tight_even_headway(self):
        config = tiny_line_config()
        with pytest.raises(ConfigError):
            generate_dataset(config, 1, 0, even_headway=10.0)


class TestCsvRoundTrip:
    def test_round_trip(self):
        config = tiny_line_config()
        logs = generate_dataset(config, 2, base_seed=1, even_headway=300.0,
                                jitter_sd=45.0)
        text = log_to_csv(logs)
        back = logs_from_csv(text, config_digest=config.digest())
        assert log_to_csv(back) == text

    def test_header_checked(self):
        with pytest.raises(ValueError):
            logs_from_csv("nope,nope\n1,2\n")
