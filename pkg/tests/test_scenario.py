"""Scenario file parsing, validation and serialization."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopsync.scenario import (ESTIMATOR_NAMES, Scenario, ScenarioError, parse_range, parse_scenario,
                               scenario_hash, serialize_scenario)


class TestDefaults:
    def test_empty_file(self):
        s = parse_scenario("")
        assert s == Scenario()
        assert (s.n_listen, s.n_coop, s.sigma_f_sq, s.trials) == (16, 16, 1e-4, 2000)
        assert s.values == tuple(float(v) for v in range(-20, 31, 5))
        assert s.estimators == ESTIMATOR_NAMES

    def test_linear_snrs(self):
        s = Scenario(snr_sd_db=10.0, snr_sr_offset_db=10.0, snr_rd_offset_db=-10.0)
        assert (s.snr_sd, s.snr_sr, s.snr_rd, s.snr_sdl) == pytest.approx((10.0, 100.0, 1.0, 10.0))


class TestParsing:
    def test_sections_and_comments(self):
        text = """
        # a comment
        [system]
        n_coop = 8   # trailing
        sigma_f_sq = inf
        [estimation]
        estimators = corr, map2d
        [sweep]
        param = n
        values = 4, 8, 16
        """
        s = parse_scenario(text)
        assert s.n_coop == 8 and math.isinf(s.sigma_f_sq)
        assert s.estimators == ("corr", "map2d")
        assert s.values == (4.0, 8.0, 16.0)

    def test_keys_without_section(self):
        assert parse_scenario("trials = 5\nseed = 0x10").seed == 16

    def test_trials_zero(self):
        with pytest.raises(ScenarioError) as info:
            parse_scenario("[run]\ntrials = 0\n")
        assert info.value.key == "trials" and info.value.line == 2

    def test_unknown_key_with_line(self):
        with pytest.raises(ScenarioError) as info:
            parse_scenario("[system]\nn_coop = 16\nbogus = 1\n")
        assert info.value.key == "bogus" and info.value.line == 3

    @pytest.mark.parametrize("text,key", [
        ("[nowhere]\n", None),
        ("[system]\ntrials = 3\n", "trials"),
        ("trials = 3\ntrials = 4\n", "trials"),
        ("n_coop = sixteen\n", "n_coop"),
        ("x_rd = random\n", "x_rd"),
        ("estimators = map2d, foo\n", "estimators"),
        ("estimators = corr, corr\n", "estimators"),
        ("sigma_f_sq = 0\n", "sigma_f_sq"),
        ("values = 1:0:1\n", "values"),
        ("max_lag = 16\n", "max_lag"),
        ("param = gamma\ngamma_policy = optimal\n", "param"),
        ("param = n\nvalues = 4, 6.5\n", "values"),
        ("just text\n", None),
    ])
    def test_rejected(self, text, key):
        with pytest.raises(ScenarioError) as info:
            parse_scenario(text)
        assert info.value.key == key

    def test_overrides_apply_last(self):
        s = parse_scenario("[run]\ntrials = 10\n", {"trials": "3", "values": "0:10:5"})
        assert s.trials == 3 and s.values == (0.0, 5.0, 10.0)

    def test_override_unknown(self):
        with pytest.raises(ScenarioError):
            parse_scenario("", {"nope": "1"})


class TestRange:
    @pytest.mark.parametrize("text,expected", [
        ("-20:30:5", tuple(float(v) for v in range(-20, 31, 5))),
        ("0:1:0.1", tuple(round(0.1 * i, 12) for i in range(11))),
        ("3:1:-1", (3.0, 2.0, 1.0)),
        ("7", (7.0,)),
    ])
    def test_examples(self, text, expected):
        assert parse_range(text) == pytest.approx(expected)

    def test_zero_step(self):
        with pytest.raises(ScenarioError):
            parse_range("0:1:0")


class TestPoints:
    def test_n_sweep(self):
        s = Scenario(param="n", values=(4.0, 8.0))
        assert [(p.n_listen, p.n_coop) for p in s.points()] == [(4, 4), (8, 8)]

    def test_sigma_sweep_in_db(self):
        assert Scenario(param="sigma_f_sq_db", values=(-40.0,)).points()[0].sigma_f_sq == pytest.approx(1e-4)


scenarios = st.builds(
    Scenario,
    n_listen=st.integers(2, 64), n_coop=st.integers(2, 64),
    sigma_f_sq=st.one_of(st.floats(1e-8, 1.0), st.just(math.inf)),
    snr_sd_db=st.floats(-30, 40), snr_sr_offset_db=st.floats(-20, 20),
    gamma_policy=st.sampled_from(("fixed", "optimal", "zero")), gamma=st.floats(0, 1.5),
    relay_estimator=st.sampled_from(("map", "corr")), x_rd=st.sampled_from(("sylvester", "ones")),
    estimators=st.lists(st.sampled_from(ESTIMATOR_NAMES), min_size=1, max_size=4, unique=True).map(tuple),
    trials=st.integers(1, 10 ** 6), seed=st.integers(0, 2 ** 64 - 1),
    values=st.lists(st.floats(-50, 50), min_size=1, max_size=6).map(tuple),
)


class TestRoundTrip:
    @settings(max_examples=100, deadline=None)
    @given(s=scenarios)
    def test_serialize_parse(self, s):
        again = parse_scenario(serialize_scenario(s))
        assert again == s
        assert scenario_hash(again) == scenario_hash(s)

    def test_hash_changes_with_content(self):
        assert scenario_hash(Scenario()) != scenario_hash(Scenario(seed=1))
        assert len(scenario_hash(Scenario())) == 16
