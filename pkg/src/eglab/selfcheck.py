"""Fast built-in invariant suite behind `eglab verify`.

Each check re-states a core correctness property in a few seconds total:
algebraic identities of the communication steps, gradient correctness,
scheduling, and end-to-end determinism. A violation raises inside the
check; run_all turns that into a (name, ok, detail) row.
"""

import numpy as np

from . import data, nn, protocols, sim

CHECKS = []


def check(fn):
    CHECKS.append(fn)
    return fn


def _random_gossip_round(rng, workers, dim):
    params = [rng.normal(size=dim) for _ in range(workers)]
    sel = protocols.select_peers(workers, rng)
    sets = protocols.build_gossip_sets(sel, "elastic")
    return params, sel, sets


@check
def elastic_conserves_parameter_sum():
    rng = np.random.default_rng(101)
    for _ in range(200):
        workers = int(rng.integers(2, 9))
        params, _, sets = _random_gossip_round(rng, workers, 7)
        alpha = float(rng.uniform(0.0, 1.0))
        out = protocols.elastic_gossip_step(params, sets, alpha)
        before = sum(p.sum() for p in params)
        after = sum(p.sum() for p in out)
        assert abs(after - before) <= 1e-9 * max(1.0, abs(before))


@check
def easgd_conserves_workers_plus_center():
    rng = np.random.default_rng(102)
    for _ in range(200):
        workers = int(rng.integers(2, 9))
        params = [rng.normal(size=5) for _ in range(workers)]
        center = rng.normal(size=5)
        out, c2 = protocols.easgd_step(params, center, float(rng.uniform(0, 1)))
        before = sum(p.sum() for p in params) + center.sum()
        after = sum(p.sum() for p in out) + c2.sum()
        assert abs(after - before) <= 1e-9 * max(1.0, abs(before))


@check
def alpha_boundaries_are_exact():
    rng = np.random.default_rng(103)
    params, sel, sets = _random_gossip_round(rng, 2, 6)
    frozen = protocols.elastic_gossip_step(params, sets, 0.0)
    assert all(a.tobytes() == b.tobytes() for a, b in zip(frozen, params))
    # |W| = 2 selections are always mutual, so alpha = 1 is a pure swap
    swapped = protocols.elastic_gossip_step(params, sets, 1.0)
    assert swapped[0].tobytes() == params[1].tobytes()
    assert swapped[1].tobytes() == params[0].tobytes()


@check
def consensus_at_inverse_worker_count_hits_mean():
    rng = np.random.default_rng(104)
    params = [rng.normal(size=8) for _ in range(5)]
    out = protocols.full_consensus_step(params, 1.0 / 5)
    mean = protocols.allreduce_mean(params)
    for p in out:
        np.testing.assert_allclose(p, mean, rtol=0, atol=1e-12)


@check
def pull_gossip_identical_replicas_are_fixed():
    base = np.linspace(-1.0, 1.0, 9)
    params = [base.copy() for _ in range(4)]
    out = protocols.pull_gossip_step(params, {0: 2, 3: 1})
    assert all(p.tobytes() == base.tobytes() for p in out)


@check
def backprop_matches_finite_differences():
    spec = nn.MlpSpec((4, 6, 3))
    for seed in (0, 1, 2):
        rng = np.random.default_rng(seed)
        params = nn.kaiming_init(spec, rng)
        x = rng.normal(size=(5, 4))
        y = rng.integers(3, size=5)
        logits, cache = nn.forward(spec, params, x)
        _, dlogits = nn.softmax_ce(logits, y)
        grad = nn.backward(spec, params, cache, dlogits)
        ref = nn.finite_diff_grad(spec, params, x, y)
        scale = max(np.abs(grad).max(), np.abs(ref).max(), 1e-12)
        assert np.abs(grad - ref).max() / scale < 1e-5


@check
def plain_sgd_is_nag_without_momentum():
    rng = np.random.default_rng(105)
    params = rng.normal(size=20)
    grad = rng.normal(size=20)
    p2, v2 = nn.nag_update(params, np.zeros_like(params), grad, 0.1, 0.0)
    assert p2.tobytes() == (params - 0.1 * grad).tobytes()
    assert v2.tobytes() == (np.zeros_like(grad) - 0.1 * grad).tobytes()


@check
def period_schedule_fires_exactly_on_multiples():
    spec = protocols.ProtocolSpec("pull_gossip", tau=16)
    hits = [t for t in range(64) if protocols.should_communicate(spec, t, None)]
    assert hits == [0, 16, 32, 48]


@check
def micro_run_is_deterministic():
    config = sim.ExperimentConfig(
        model=nn.MlpSpec((4, 6, 2)),
        protocol=protocols.ProtocolSpec("elastic_gossip", alpha=0.5, tau=2),
        optimizer=sim.OptimizerSpec(eta=0.05, mu=0.9),
        data=sim.DataConfig(
            source="synthetic", n=60, dims=4, classes=2, spread=0.5, holdout=12
        ),
        workers=2,
        effective_batch=4,
        steps=8,
        seed=13,
        eval_every=4,
    )
    a = sim.run_experiment(config)
    b = sim.run_experiment(config)
    assert a.records == b.records
    for x, y in zip(a.final_params, b.final_params):
        assert x.tobytes() == y.tobytes()


@check
def rng_streams_stay_isolated():
    streams = sim.derive_rng_streams(7, 2)
    streams.stream(0, "dropout").random(512)
    streams.stream(1, "peer").random(512)
    twin = sim.derive_rng_streams(7, 2)
    assert (
        streams.stream(0, "schedule").random(4).tobytes()
        == twin.stream(0, "schedule").random(4).tobytes()
    )


@check
def sampler_visits_each_sample_once_per_pass():
    rng = np.random.default_rng(106)
    sampler = data.MinibatchSampler(np.arange(30, 60), rng, 10)
    seen = np.concatenate([sampler.next_indices() for _ in range(3)])
    assert sorted(seen) == list(range(30, 60))


def run_all():
    results = []
    for fn in CHECKS:
        try:
            fn()
            results.append((fn.__name__, True, ""))
        except Exception as e:  # noqa: BLE001 - report, never crash the suite
            results.append((fn.__name__, False, f"{type(e).__name__}: {e}"))
    return results
