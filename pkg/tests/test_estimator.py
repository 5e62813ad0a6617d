import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from afglosa.estimator import GlosaAgent, check_observations

TINY = dict(episodes=3, buffer_capacity=100, batch_size=50, epochs_per_update=1)
OBS = np.array([[240, 11, 0, 30, 30, 11, 300, 1], [100, 8, 0, 5, 25, 11, 300, 0]], float)


def test_get_params_and_clone():
    agent = GlosaAgent(method="l_glosa", episodes=10)
    params = agent.get_params()
    assert params["method"] == "l_glosa" and params["episodes"] == 10
    assert clone(agent).get_params() == params


def test_predict_before_fit_raises():
    with pytest.raises(NotFittedError):
        GlosaAgent().predict(OBS)


@pytest.mark.parametrize("bad", [np.zeros((2, 7)), [[np.nan] * 8], "abc"])
def test_observation_validation(bad):
    with pytest.raises(ValueError):
        check_observations(bad)


def test_single_row_is_promoted():
    assert check_observations(OBS[0]).shape == (1, 8)


def test_rule_and_benchmark_need_no_training():
    rule = GlosaAgent(method="rule_glosa").fit()
    out = rule.predict(OBS)
    assert out[0, 0] == 1 and out[0, 1] == pytest.approx(-1.5)
    assert GlosaAgent(method="benchmark").fit().predict(OBS).tolist() == [[0, 0], [0, 0]]


def test_fit_predict_save_load(tmp_path):
    agent = GlosaAgent(**TINY).fit()
    assert len(agent.curves_["episodes"]) == 3
    pred = agent.predict(OBS)
    proba = agent.predict_proba(OBS)
    assert pred.shape == (2, 2) and set(pred[:, 0]) <= {0.0, 1.0}
    np.testing.assert_allclose(proba.sum(1), 1.0)
    path = tmp_path / "ck.txt"
    agent.save(path)
    back = GlosaAgent.load(path)
    assert back.get_params()["buffer_capacity"] == 100
    np.testing.assert_array_equal(back.predict(OBS), pred)


def test_run_episode_and_score():
    agent = GlosaAgent(method="benchmark").fit()
    m, total, env = agent.run_episode(3)
    assert m.fuel > 0 and total < 0
    assert agent.score(seeds=[3]) == pytest.approx(total)


def test_unknown_method_rejected():
    with pytest.raises(ValueError):
        GlosaAgent(method="oracle").fit()
