from dataclasses import replace

import numpy as np
import pytest

from semalloc.allocator import DROPPED, allocate, audit_result
from semalloc.baselines import (QoeOptions, allocate_classical, allocate_qoe, allocate_strict,
                                collapse_bands, method_users, run_method, strict_targets)
from semalloc.scenario import (ScenarioConfig, UserProfile, channel_realization, db_to_linear,
                               sample_users)
from semalloc.similarity import SimilarityTable, generate_table

TABLE = generate_table()


def scenario(seed=1, bandwidth=15e6, n=10):
    cfg = ScenarioConfig(user_count=n, total_bandwidth_hz=bandwidth, rng_seed=seed)
    users, gains = sample_users(cfg)
    return cfg, users, gains


def user(uid=0, distance=10.0, bits=4e6, tau=0.5e-3, xi_min=0.6, xi_max=0.9, beta_min=1e6):
    return UserProfile(uid, distance, bits, db_to_linear(20.0), xi_min, xi_max, tau, beta_min)


class TestStrictTargets:
    def test_policies(self):
        cfg, users, _ = scenario(2)
        assert strict_targets(users, cfg, "upper") == [u.xi_max for u in users]
        assert strict_targets(users, cfg, "lower") == [u.xi_min for u in users]
        drawn = strict_targets(users, cfg, "independent")
        assert drawn == strict_targets(users, cfg, "independent")
        assert all(0.6 <= t <= 0.9 for t in drawn)

    def test_unknown_policy(self):
        cfg, users, _ = scenario(2)
        with pytest.raises(ValueError):
            strict_targets(users, cfg, "median")


class TestStrict:
    @pytest.mark.parametrize("seed", [0, 3])
    def test_degenerate_band_equals_range_method(self, seed):
        cfg, users, gains = scenario(seed, 9e6)
        flat = collapse_bands(users, [u.xi_max for u in users])
        a = allocate(cfg, flat, gains, TABLE)
        b = allocate_strict(cfg, flat, gains, TABLE)
        assert replace(a.rounded(), method="strict") == b.rounded()

    def test_nearest_above_target(self):
        table = SimilarityTable([20.0], [0.2, 0.4, 0.6], [[0.9, 0.78, 0.6]])
        cfg = ScenarioConfig(user_count=1)
        u = user(xi_min=0.6, xi_max=0.9)
        res = allocate_strict(cfg, [u], channel_realization([u], cfg), table, targets=[0.75])
        assert res.per_user[0].similarity == 0.78
        assert res.per_user[0].satisfied

    def test_unreachable_target(self):
        table = SimilarityTable([20.0], [0.2, 0.4], [[0.70, 0.5]])
        cfg = ScenarioConfig(user_count=1)
        u = user()
        res = allocate_strict(cfg, [u], channel_realization([u], cfg), table, targets=[0.75])
        assert not res.per_user[0].satisfied

    def test_higher_similarity_than_range(self):
        cfg, users, gains = scenario(5)
        prop = allocate(cfg, users, gains, TABLE)
        strict = allocate_strict(cfg, users, gains, TABLE)
        sp = [a.similarity for a in prop.per_user if a.satisfied]
        ss = [a.similarity for a in strict.per_user if a.satisfied]
        assert np.mean(ss) >= np.mean(sp)


class TestClassical:
    def test_all_or_nothing_similarity(self):
        for seed in range(4):
            cfg, users, gains = scenario(seed, 8e6)
            res = allocate_classical(cfg, users, gains)
            assert {a.similarity for a in res.per_user} <= {0.0, 1.0}
            assert all(a.compression == 0.0 for a in res.per_user)

    def test_raw_payload_misses_delay(self):
        cfg, users, gains = scenario(1)
        res = allocate_classical(cfg, users, gains)
        for u, a in zip(users, res.per_user):
            if a.served:
                assert a.delay_s > u.delay_bound_s and not a.satisfied

    def test_tiny_payload_satisfied(self):
        cfg = ScenarioConfig(user_count=1)
        u = user(bits=1e3, tau=0.5e-3)
        res = allocate_classical(cfg, [u], channel_realization([u], cfg))
        a = res.per_user[0]
        assert a.similarity == 1.0 and a.satisfied

    def test_audit_clean(self):
        cfg, users, gains = scenario(7, 8e6)
        res = allocate_classical(cfg, users, gains)
        assert not [v for v in audit_result(cfg, users, gains, res) if v.fatal]


class TestQoe:
    def test_channel_count(self):
        cfg, users, gains = scenario(3, 8e6)
        res = allocate_qoe(cfg, users, gains, TABLE)
        channels = [a.channel for a in res.per_user if a.channel is not None]
        assert len(channels) == 8
        assert sorted(channels) == list(range(8))

    @pytest.mark.parametrize("bandwidth,width", [(8e6, 1e6), (15e6, 2e6), (25e6, 1.5e6)])
    def test_at_most_one_channel_each(self, bandwidth, width):
        cfg, users, gains = scenario(4, bandwidth)
        res = allocate_qoe(cfg, users, gains, TABLE, QoeOptions(channel_width_hz=width))
        channels = [a.channel for a in res.per_user if a.channel is not None]
        assert len(channels) == len(set(channels)) <= int(bandwidth // width)
        assert res.served_bandwidth_hz <= cfg.total_bandwidth_hz

    def test_channels_follow_gain_order(self):
        cfg, users, gains = scenario(4, 5e6)
        res = allocate_qoe(cfg, users, gains, TABLE)
        order = np.argsort(-gains.gains_linear, kind="stable")
        assert [res.per_user[k].channel for k in order[:5]] == list(range(5))

    def test_unreachable_target_idles_channel(self):
        cfg = ScenarioConfig(user_count=3, total_bandwidth_hz=2e6)
        us = [user(0, distance=5.0), user(1, distance=10.0), user(2, distance=20.0)]
        res = allocate_qoe(cfg, us, channel_realization(us, cfg), TABLE,
                           QoeOptions(strict_xi_target=(0.999, 0.7, 0.7)))
        first, second, third = res.per_user
        assert first.channel == 0 and first.admission == DROPPED and not first.satisfied
        assert second.channel == 1 and second.satisfied
        # the idle channel is not handed to the third user
        assert third.channel is None and not third.served

    def test_similarity_only_weight(self):
        cfg, users, gains = scenario(2)
        res = allocate_qoe(cfg, users, gains, TABLE,
                           QoeOptions(similarity_weight=1.0, rate_weight=0.0))
        for a in res.per_user:
            if a.served:
                row = TABLE.row(10 * np.log10(a.snr_linear))
                assert a.similarity == row[TABLE.compression_grid < 1].max()

    def test_meets_target(self):
        cfg, users, gains = scenario(2)
        res = allocate_qoe(cfg, users, gains, TABLE)
        for u, a in zip(users, res.per_user):
            if a.served:
                assert a.similarity >= u.xi_max and a.power_w == cfg.max_power_w

    @pytest.mark.parametrize("kw", [{"channel_width_hz": 0.0}, {"similarity_weight": 0.7},
                                    {"similarity_weight": 1.5, "rate_weight": -0.5}])
    def test_options_validated(self, kw):
        with pytest.raises(ValueError):
            QoeOptions(**kw)

    def test_width_above_budget(self):
        cfg, users, gains = scenario(2, 8e6)
        with pytest.raises(ValueError):
            allocate_qoe(cfg, users, gains, TABLE, QoeOptions(channel_width_hz=9e6))


class TestDispatch:
    @pytest.mark.parametrize("method", ["proposed", "strict", "classical", "qoe"])
    def test_audit_clean_for_every_method(self, method):
        cfg, users, gains = scenario(8, 9e6)
        res = run_method(method, cfg, users, gains, TABLE)
        assert res.method == method
        seen = method_users(users, method, cfg)
        assert not [v for v in audit_result(cfg, seen, gains, res) if v.fatal]

    def test_unknown(self):
        cfg, users, gains = scenario(8)
        with pytest.raises(ValueError):
            run_method("greedy", cfg, users, gains, TABLE)
