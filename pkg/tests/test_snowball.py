"""Snowball study harness at reduced scale (the acceptance suite runs it full-size)."""

import pytest

from ever.errors import ConfigError
from ever.snowball import run_snowball_study


@pytest.fixture(scope="module")
def study():
    return run_snowball_study(trials=250, sentences=8, p_intrinsic=0.15,
                              p_extrinsic=0.15, snowball_gain=2.0, seed=17)


class TestSnowballStudy:
    def test_pipeline_cuts_mean_error(self, study):
        assert study.mean_error["ever"] < study.mean_error["none"]
        assert study.paired_p < 0.01

    def test_error_rate_rises_without_rectification(self, study):
        rates = study.per_index_rates["none"]
        assert rates[-1] > rates[0]
        assert study.slope["none"] > 0

    def test_pipeline_keeps_rate_flat(self, study):
        assert study.slope_p_one_sided["ever"] > 0.01 or study.slope["ever"] <= 0

    def test_report_serializes(self, study):
        payload = study.to_dict()
        assert payload["schema"] == "ever-snowball/1"
        assert len(payload["per_index_rates"]["none"]) == 8

    def test_zero_corruption_means_zero_errors(self):
        study = run_snowball_study(trials=20, sentences=4, p_intrinsic=0.0,
                                   p_extrinsic=0.0, seed=1)
        assert study.mean_error["none"] == 0.0
        assert study.mean_error["ever"] == 0.0

    def test_deterministic_given_seed(self):
        a = run_snowball_study(trials=30, sentences=4, seed=9)
        b = run_snowball_study(trials=30, sentences=4, seed=9)
        assert a.to_dict() == b.to_dict()

    def test_too_few_trials_rejected(self):
        with pytest.raises(ConfigError):
            run_snowball_study(trials=1)
