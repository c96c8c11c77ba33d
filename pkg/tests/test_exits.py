import numpy as np

from raywinding.exits import iid_functional_exits, series_first_exits, stream_ray_exits
from raywinding.freegroup import Projection
from raywinding.measures import example_anu_measure, srw_measure
from raywinding.walks import WalkPlan, batch_run

PROJ = Projection.canonical(2)
E1 = np.array([1.0, 0.0])


def test_series_first_exits_by_hand():
    series = [
        np.array([1.0, 2.0, 3.0, 4.0]),      # exits up at index 3 (value 3)
        np.array([-1.0, -2.0, -3.0]),        # exits down at index 3
        np.array([0.0, 1.0, -1.0, 2.0]),     # never leaves (-3, 3)
    ]
    rep = series_first_exits(series, lower=-3.0, upper=3.0, horizon=10)
    assert list(rep.exit_side) == [1, -1, 0]
    assert list(rep.exit_time) == [3, 3, -1]
    assert rep.exit_value[0] == 3.0 and rep.exit_value[1] == -3.0
    assert rep.censored_fraction == 1 / 3
    assert rep.upper_fraction == 0.5


def test_iid_exit_matches_direct_cumsum():
    mu = srw_measure(2)
    rep = iid_functional_exits(mu, PROJ, E1, lower=-8.0, upper=8.0, n_paths=64,
                               master_seed=3, horizon=4000, block=37, batch_paths=13)
    from raywinding.rng import counter_uniform_block, derive_key
    from raywinding.freegroup import abelianize

    key = derive_key(3, "exit-iid")
    incr = np.array([float(abelianize(w, PROJ) @ E1) for w in mu.atoms])
    cdf = mu.cdf()
    for i in range(64):
        u = counter_uniform_block(key, np.array([i], dtype=np.uint64), np.arange(4000))[0]
        vals = np.cumsum(incr[np.searchsorted(cdf, u, side="right")])
        hits = np.nonzero((vals >= 8) | (vals <= -8))[0]
        if hits.size:
            assert rep.exit_time[i] == hits[0] + 1
            assert rep.exit_side[i] == (1 if vals[hits[0]] >= 8 else -1)
        else:
            assert rep.exit_side[i] == 0


def test_iid_exit_symmetric_half():
    rep = iid_functional_exits(srw_measure(2), PROJ, E1, lower=-40.0, upper=40.0,
                               n_paths=4000, master_seed=5, horizon=200_000)
    assert rep.censored_fraction < 0.01
    assert abs(rep.upper_fraction - 0.5) < 0.03


def test_stream_ray_exits_matches_boundary_prefix_oracle():
    mu = srw_measure(2)
    seed, P, cap = 11, 40, 60
    rep = stream_ray_exits(mu, PROJ, E1, lower=-6.0, upper=6.0, n_paths=P,
                           master_seed=seed, ray_horizon=cap, window=64, batch_paths=16)
    plan = WalkPlan(measure=mu, projection=PROJ, horizon=2000, n_paths=P, master_seed=seed,
                    checkpoints=(2000,), store_boundary=True, batch_paths=P)
    ds = batch_run(plan)
    table = {1: 1.0, -1: -1.0, 2: 0.0, -2: 0.0}
    for i in range(P):
        prefix = ds.boundary_prefixes[i][:cap]
        assert len(prefix) >= cap  # long horizon stabilizes well past the cap
        vals = np.cumsum([table[int(a)] for a in prefix])
        hits = np.nonzero((vals >= 6) | (vals <= -6))[0]
        if hits.size:
            assert rep.exit_time[i] == hits[0] + 1
            assert rep.exit_side[i] == (1 if vals[hits[0]] >= 6 else -1)
        else:
            assert rep.exit_side[i] == 0


def test_stream_ray_exits_example_anu():
    # coordinate 2 of the ray winding is centered for the example measure
    mu = example_anu_measure()
    e2 = np.array([0.0, 1.0])
    rep = stream_ray_exits(mu, PROJ, e2, lower=-15.0, upper=15.0, n_paths=600,
                           master_seed=13, ray_horizon=40_000, window=128)
    assert rep.violated == 0
    assert rep.censored_fraction < 0.02
    assert abs(rep.upper_fraction - 0.5) < 0.06
