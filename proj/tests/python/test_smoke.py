import math

import numpy as np
import pytest

import idtest


def test_version():
    assert idtest.__version__ == "0.1.0"


def test_bh_anchor():
    assert idtest.benjamini_hochberg([0.03, 0.66]) == [0.06, 0.66]
    assert idtest.benjamini_hochberg([0.04, 0.03]) == [0.04, 0.04]


def test_draw_sample_shapes_and_reproducibility():
    a = idtest.draw_sample(n=300, p=6, seed=4)
    b = idtest.draw_sample(n=300, p=6, seed=4)
    assert a["x"].shape == (300, 6)
    assert set(np.unique(a["z"])) <= {0.0, 1.0}
    for key in ("y", "d", "z", "x"):
        np.testing.assert_array_equal(a[key], b[key])


def test_run_test_on_null_data():
    s = idtest.draw_sample(n=800, p=8, seed=2)
    r = idtest.run_test(s["y"], s["d"], s["z"], s["x"], seed=5)
    assert r["arm"] == "all"
    assert r["n_used"] <= r["n_total"] == 800
    assert math.isclose(r["t_stat"], r["delta_hat"] / r["std_error"], rel_tol=1e-12)
    assert 0.0 <= r["p_value"] <= 1.0
    again = idtest.run_test(s["y"], s["d"], s["z"], s["x"], seed=5)
    assert again == r


def test_forest_learner_on_treated_arm():
    s = idtest.draw_sample(n=600, p=4, seed=3)
    r = idtest.run_test(s["y"], s["d"], s["z"], s["x"], arm="treated", learner="forest")
    assert r["arm"] == "treated"
    assert r["n_total"] == int(s["d"].sum())


def test_invalid_input_raises():
    y = np.array([1.0, 2.0, 3.0])
    with pytest.raises(idtest.IdtestError, match="NonBinary"):
        idtest.run_test(y, np.array([0.0, 2.0, 1.0]), np.array([0.0, 1.0, 1.0]), np.zeros((3, 1)))


def test_monte_carlo_and_command_body():
    s = idtest.monte_carlo(n=200, p=5, reps=2, seed=3)
    assert s["replications"] + s["failures"] == 2
    assert s["rejection_rate"] in (0.0, 0.5, 1.0)
    body = idtest.run_command("simulate", "", 3, "lasso", 2, 200, 5)
    assert body.startswith("# idtest report")
    assert body == idtest.run_command("simulate", "", 3, "lasso", 2, 200, 5)
    assert "[timings]" not in body
