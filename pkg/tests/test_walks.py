import numpy as np
import pytest

from raywinding.errors import StabilizationFailure
from raywinding.freegroup import Projection, Word, abelianize, invert, multiply, word_length
from raywinding.measures import example_anu_measure, point_mass, srw_measure
from raywinding.treeboundary import gromov_product, horofunction
from raywinding.walks import (
    MomentAccumulator,
    StoppingSpec,
    WalkPlan,
    batch_run,
    boundary_from_prefix,
    extend_ray_coverage,
    limit_boundary_point,
    make_reference_words,
    sample_path,
)

PROJ = Projection.canonical(2)


def small_plan(measure, **kw):
    defaults = dict(
        measure=measure, projection=PROJ, horizon=400, n_paths=24, master_seed=7,
        checkpoints=(1, 7, 100, 400), ray_grid=(), n_reference_points=3,
        stopping=StoppingSpec((20.0, 50.0), lambda_ref=0.5), forward_sigma=True,
        batch_paths=7,
    )
    defaults.update(kw)
    return WalkPlan(**defaults)


def test_engine_matches_scalar_sampler():
    for measure in (srw_measure(2), example_anu_measure()):
        plan = small_plan(measure)
        ds = batch_run(plan)
        for i in (0, 3, 11, 23):
            rec = sample_path(measure, PROJ, plan.horizon, plan.master_seed, i,
                              stopping=plan.stopping, checkpoints=plan.checkpoints)
            for ci, (k, w, t, wind) in enumerate(rec.checkpoints):
                assert ds.t_checkpoint[i, ci] == t == word_length(w)
                assert np.array_equal(ds.wind_checkpoint[i, ci], wind)
            for si, s in enumerate(plan.stopping.thresholds):
                if s in rec.stopping_hits:
                    tau, t, wind = rec.stopping_hits[s]
                    assert ds.tau[i, si] == tau
                    assert ds.t_at_tau[i, si] == t
                    assert np.array_equal(ds.wind_at_tau[i, si], wind)
                else:
                    assert ds.tau[i, si] == -1
            assert ds.conf_len[i] == word_length(rec.confirmed_prefix)
            assert ds.final_t[i] == word_length(rec.final_word)


def test_engine_sigma_matches_exact_busemann():
    plan = small_plan(srw_measure(2))
    ds = batch_run(plan)
    refs = plan.reference_letters()
    for i in (0, 5, 17):
        rec = sample_path(plan.measure, PROJ, plan.horizon, plan.master_seed, i,
                          checkpoints=plan.checkpoints)
        for ci, (k, w, t, wind) in enumerate(rec.checkpoints):
            for r in range(refs.shape[0]):
                xi = boundary_from_prefix(refs[r])
                # sigma(w^{-1}, x) = h_x(w)
                assert ds.sigma_checkpoint[i, ci, r] == horofunction(xi, w)
                # sigma(w, x) = h_x(w^{-1})
                assert ds.sigma_forward[i, ci, r] == horofunction(xi, invert(w))


def test_determinism_and_worker_independence():
    plan = small_plan(example_anu_measure())
    d1 = batch_run(plan, workers=1)
    d2 = batch_run(plan, workers=4)
    assert d1.digest() == d2.digest()
    d3 = batch_run(small_plan(example_anu_measure()), workers=1)
    assert d1.digest() == d3.digest()
    other = batch_run(small_plan(example_anu_measure(), master_seed=8))
    assert other.digest() != d1.digest()


def test_zero_horizon_is_identity():
    rec = sample_path(srw_measure(2), PROJ, 0, 1, 0)
    assert rec.final_word == Word(())
    assert word_length(rec.final_word) == 0


def test_srw_drift_birth_death_oracle():
    # chain oracle: distance drifts at (2k-2)/(2k) = 1/2 for k = 2
    plan = small_plan(srw_measure(2), horizon=2000, n_paths=2000, checkpoints=(2000,),
                      n_reference_points=0, stopping=None, forward_sigma=False,
                      batch_paths=1000, master_seed=100)
    ds = batch_run(plan)
    speed = ds.final_t.mean() / plan.horizon
    assert abs(speed - 0.5) < 0.01


def test_example_anu_length_is_exact_atom_sum():
    # the support never cancels, so t_n is exactly the sum of atom lengths
    mu = example_anu_measure()
    plan = small_plan(mu, horizon=500, n_paths=50, checkpoints=(500,), master_seed=3)
    ds = batch_run(plan)
    from raywinding.rng import counter_choice, derive_key

    key = plan.walk_key()
    lens = np.array([word_length(w) for w in mu.atoms])
    cdf = mu.cdf()
    for i in range(50):
        total = sum(
            lens[counter_choice(key, i, s, cdf)] for s in range(500)
        )
        assert ds.final_t[i] == total


def test_deterministic_point_mass_oracle():
    mu = point_mass(multiply(Word((1,)), Word((2,))), k=2)  # delta_{uv}
    plan = small_plan(mu, horizon=100, n_paths=2, checkpoints=(100,),
                      stopping=None, n_reference_points=0, forward_sigma=False)
    ds = batch_run(plan)
    assert (ds.final_t == 200).all()
    rec = sample_path(mu, PROJ, 50, 7, 0)
    xi = limit_boundary_point(rec, mu, PROJ)
    assert xi.prefix(8) == Word((1, 2, 1, 2, 1, 2, 1, 2))
    # tau_s = ceil(s) for delta_u with lambda_ref = 1
    mu_u = point_mass(Word((1,)), k=2)
    spec = StoppingSpec((5.0, 17.0, 30.5), lambda_ref=1.0)
    rec_u = sample_path(mu_u, PROJ, 40, 7, 0, stopping=spec)
    assert rec_u.stopping_hits[5.0][0] == 5
    assert rec_u.stopping_hits[17.0][0] == 17
    assert rec_u.stopping_hits[30.5][0] == 31


def test_overshoot_exactly_bounded_and_tau_monotone():
    mu = example_anu_measure()
    spec = StoppingSpec((10.0, 30.0, 60.0), lambda_ref=5 / 3)
    plan = small_plan(mu, horizon=300, n_paths=300, stopping=spec, checkpoints=(300,),
                      n_reference_points=0, forward_sigma=False, batch_paths=128)
    ds = batch_run(plan)
    assert (ds.tau >= 0).all()
    for si, s in enumerate(spec.thresholds):
        over = ds.t_at_tau[:, si] - s * spec.lambda_ref
        assert (over >= 0).all()
        assert (over <= mu.max_word_length).all()
    assert (np.diff(ds.tau, axis=1) > 0).all()


def test_censoring_is_flagged():
    spec = StoppingSpec((10.0, 5000.0), lambda_ref=0.5)
    plan = small_plan(srw_measure(2), horizon=100, n_paths=10, stopping=spec,
                      checkpoints=(100,), n_reference_points=0, forward_sigma=False)
    ds = batch_run(plan)
    assert ds.censored[:, 1].all()
    assert not ds.censored[:, 0].any()
    rec = sample_path(srw_measure(2), PROJ, 100, 7, 0, stopping=spec)
    assert rec.censored_thresholds == [5000.0]


def test_boundary_prefix_monotone_under_horizon_doubling():
    mu = srw_measure(2)
    for i in range(100):
        r1 = sample_path(mu, PROJ, 256, 21, i)
        r2 = sample_path(mu, PROJ, 512, 21, i)
        p1 = r1.confirmed_prefix.letters
        p2 = r2.confirmed_prefix.letters
        assert p2[: len(p1)] == p1


def test_boundary_first_letter_uniform():
    # harmonic measure is invariant under generator permutations for the SRW
    plan = small_plan(srw_measure(2), horizon=200, n_paths=10_000, checkpoints=(200,),
                      stopping=None, n_reference_points=0, forward_sigma=False,
                      store_boundary=True, batch_paths=2500, master_seed=5)
    ds = batch_run(plan)
    first = np.array([p[0] for p in ds.boundary_prefixes if len(p) > 0])
    assert first.size == 10_000
    freqs = [np.mean(first == a) for a in (1, -1, 2, -2)]
    assert max(abs(f - 0.25) for f in freqs) < 0.02


def test_ray_windings_match_prefix_abelianization():
    plan = small_plan(srw_measure(2), horizon=600, n_paths=30, ray_grid=(5, 20, 80),
                      checkpoints=(600,), stopping=None, n_reference_points=0,
                      forward_sigma=False, store_boundary=True, cap_rate=0.45)
    ds = batch_run(plan)
    for i in range(30):
        prefix = ds.boundary_prefixes[i]
        for gi, t in enumerate(plan.ray_grid):
            if ds.ray_ok[i, gi]:
                w = Word(tuple(int(a) for a in prefix[:t]), _reduced=True)
                assert np.array_equal(ds.ray_wind[i, gi], abelianize(w, PROJ))


def test_extend_ray_coverage():
    # deliberately short horizon so some paths need the doubling retry
    plan = small_plan(srw_measure(2), horizon=250, n_paths=60, ray_grid=(100,),
                      checkpoints=(250,), stopping=None, n_reference_points=0,
                      forward_sigma=False, cap_rate=0.45, master_seed=17)
    ds = batch_run(plan)
    assert (ds.conf_len < 100).any()
    ds = extend_ray_coverage(ds, max_doublings=2)
    assert (ds.conf_len >= 100).all()
    assert ds.ray_ok.all()
    # extension replays the same draws: windings consistent with a long run
    long_ds = batch_run(small_plan(srw_measure(2), horizon=1000, n_paths=60,
                                   ray_grid=(100,), checkpoints=(1000,), stopping=None,
                                   n_reference_points=0, forward_sigma=False,
                                   cap_rate=0.45, master_seed=17))
    assert np.array_equal(ds.ray_wind, long_ds.ray_wind)


def test_extend_ray_coverage_failure_is_loud():
    mu = point_mass(Word((1,)), k=2)  # never branches, conf grows linearly
    plan = small_plan(mu, horizon=10, n_paths=1, ray_grid=(10_000,), checkpoints=(10,),
                      stopping=None, n_reference_points=0, forward_sigma=False)
    ds = batch_run(plan)
    with pytest.raises(StabilizationFailure):
        extend_ray_coverage(ds, max_doublings=2)


def test_accumulator_merge_associativity():
    rng = np.random.default_rng(0)
    t = rng.integers(0, 100, 500)
    wind = rng.integers(-20, 20, (500, 2))
    whole = MomentAccumulator.from_arrays(t, wind)
    for _ in range(20):
        cuts = np.sort(rng.choice(np.arange(1, 500), size=3, replace=False))
        parts = np.split(np.arange(500), cuts)
        acc = MomentAccumulator()
        for p in parts:
            acc = acc.merge(MomentAccumulator.from_arrays(t[p], wind[p]))
        assert acc == whole


def test_reference_words_are_reduced_and_deterministic():
    refs = make_reference_words(9, 2, 4, 500)
    again = make_reference_words(9, 2, 4, 500)
    assert np.array_equal(refs, again)
    for r in range(4):
        assert (refs[r, 1:] != -refs[r, :-1]).all()
        assert (refs[r] != 0).all()
