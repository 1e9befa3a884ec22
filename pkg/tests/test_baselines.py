import numpy as np
import pandas as pd
import pytest

from flowsynth.baselines import BnModel, GmmModel, fit_bn, fit_gmm, sample_bn, sample_gmm
from flowsynth.checkpoint import CheckpointError
from flowsynth.evaluation import equal_width, histogram, js_divergence, run_domain_tests
from flowsynth.schema import Attribute, AttributeSchema
from flowsynth.simdata import SimSeries, correlations, pearson_r, sim_schema, simulate


@pytest.fixture(scope="module")
def sim():
    return simulate(10_000, seed=0)


@pytest.fixture(scope="module")
def sim_gmm(sim):
    return fit_gmm(sim.to_frame(), sim_schema())


def test_gmm_recovers_normal():
    rng = np.random.default_rng(0)
    frame = pd.DataFrame({"x": rng.standard_normal(10_000), "y": rng.standard_normal(10_000)})
    m = fit_gmm(frame, sim_schema(), components=1)
    mix = m.mixtures[0]
    lo, hi = m.scalers.mins["x"], m.scalers.maxs["x"]
    assert abs(mix.mu[0] * (hi - lo) + lo) < 0.05
    assert abs(mix.sigma[0] * (hi - lo) - 1.0) < 0.05


def test_categorical_frequencies():
    schema = AttributeSchema((Attribute("v", "continuous"), Attribute("pr", "categorical",
                                                                       categories=("TCP", "UDP", "OTHER"))), (0, 1))
    frame = pd.DataFrame({"v": [1.0, 2.0, 3.0, 4.0], "pr": ["TCP", "TCP", "TCP", "UDP"]})
    m = fit_gmm(frame, schema)
    # add-one smoothing over three categories: (3+1, 1+1, 0+1) / 7
    assert m.freqs[1].tolist() == pytest.approx([4 / 7, 2 / 7, 1 / 7])
    assert m.mixtures[0].alpha.sum() == pytest.approx(1.0)


def test_degenerate_column():
    frame = pd.DataFrame({"x": np.full(100, 2.0), "y": np.linspace(0, 1, 100)})
    m = fit_gmm(frame, sim_schema())
    out = m.generate(np.random.default_rng(0), rows=50)
    assert (out["x"] == 2.0).all()


def test_gmm_kills_correlations(sim_gmm):
    out = sample_gmm(sim_gmm, 10_000, np.random.default_rng(1))
    r = correlations(SimSeries.from_frame(out))
    assert abs(r["r_xt_xt1"]) < 0.1 and abs(r["r_xt_yt"]) < 0.1


def test_gmm_marginal_jsd(sim, sim_gmm):
    out = sample_gmm(sim_gmm, 10_000, np.random.default_rng(2))
    b = equal_width(np.concatenate([sim.x, out["x"]]), 50)
    assert js_divergence(histogram(sim.x, b), histogram(out["x"], b)) < 0.05


def test_gmm_jsd_shrinks_with_n(sim, sim_gmm):
    b = equal_width(sim.x, 50)
    ref = histogram(sim.x, b)
    means = []
    for n in (100, 1_000, 10_000):
        means.append(np.mean([js_divergence(ref, histogram(sample_gmm(sim_gmm, n, np.random.default_rng(s))["x"], b))
                              for s in range(5)]))
    assert means[0] > means[1] > means[2]


def test_empty_sample(sim_gmm):
    assert len(sample_gmm(sim_gmm, 0, np.random.default_rng(0))) == 0
    with pytest.raises(ValueError):
        fit_gmm(pd.DataFrame({"x": [], "y": []}), sim_schema())


def test_gmm_checkpoint(sim_gmm, tmp_path):
    sim_gmm.save(tmp_path / "g.ckpt")
    back = GmmModel.load(tmp_path / "g.ckpt")
    pd.testing.assert_frame_equal(sample_gmm(sim_gmm, 100, np.random.default_rng(3)),
                                  sample_gmm(back, 100, np.random.default_rng(3)))
    with pytest.raises(CheckpointError):
        BnModel.load(tmp_path / "g.ckpt")


def test_bn_temporal_correlation_beats_gmm(sim):
    bn = fit_bn(sim.to_frame(), sim_schema(), child="x", parent="y")
    out = sample_bn(bn, 5_000, np.random.default_rng(4))
    r_bn = pearson_r(out["x"][1:], out["x"][:-1])
    gm = sample_gmm(fit_gmm(sim.to_frame(), sim_schema()), 5_000, np.random.default_rng(4))
    assert r_bn > abs(pearson_r(gm["x"][1:], gm["x"][:-1])) + 0.2


def test_bn_first_row_uses_marginal(sim):
    bn = fit_bn(sim.to_frame(), sim_schema(), child="x", parent="y")
    firsts = np.array([bn.sample_coded(1, np.random.default_rng(s))[0, 0] for s in range(2000)])
    marg = np.clip(np.concatenate([bn._sample_column(0, 1, np.random.default_rng(s + 10_000))
                                   for s in range(2000)]), 0, 1)
    b = equal_width(np.concatenate([firsts, marg]), 20)
    assert js_divergence(histogram(firsts, b), histogram(marg, b)) < 0.02


def test_bn_independent_matches_gmm(sim):
    frame = sim.to_frame()
    bn = fit_bn(frame, sim_schema(), child="x", parent="y", independent=True)
    gm = fit_gmm(frame, sim_schema())
    a = sample_bn(bn, 20_000, np.random.default_rng(5))["x"]
    c = sample_gmm(gm, 20_000, np.random.default_rng(6))["x"]
    b = equal_width(np.concatenate([a, c]), 50)
    assert js_divergence(histogram(a, b), histogram(c, b)) < 0.02


def test_bn_unseen_cell_falls_back(sim):
    bn = fit_bn(sim.to_frame(), sim_schema(), child="x", parent="y")
    bn.cells = {}
    assert bn._cell(0.5, 0.5) is bn.mixtures[0]


def test_bn_validation(sim):
    with pytest.raises(ValueError):
        fit_bn(sim.to_frame(), sim_schema(), child="x", parent="x")


def test_netflow_bn_passes_test3_more(train_frame, netflow):
    gm = fit_gmm(train_frame, netflow)
    bn = fit_bn(train_frame, netflow)
    g = run_domain_tests(gm.generate(np.random.default_rng(0), rows=3000)).results[3].percentage
    b = run_domain_tests(bn.generate(np.random.default_rng(0), rows=3000)).results[3].percentage
    assert b > g


def test_bn_checkpoint_and_horizon(train_frame, netflow, tmp_path):
    bn = fit_bn(train_frame, netflow, time_format="datetime")
    bn.save(tmp_path / "b.ckpt")
    back = BnModel.load(tmp_path / "b.ckpt")
    pd.testing.assert_frame_equal(bn.generate(np.random.default_rng(1), rows=200),
                                  back.generate(np.random.default_rng(1), rows=200))
    day = back.generate(np.random.default_rng(2), horizon=3600.0)
    assert len(day) > 0 and day["te"].iloc[-1] - back.start_time <= 3600.0
