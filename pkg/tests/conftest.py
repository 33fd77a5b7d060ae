"""Session fixtures: one trained zoo and caches for expensive attack runs."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import util
from ensattack import harness, losses, nn, oracle, search, zoo
from ensattack import pm as pm_mod
from ensattack.prng import stream

settings.register_profile(
    "suite", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("suite")

EPS = 16.0 / 255.0


@pytest.fixture(scope="session")
def zoo_dir(tmp_path_factory):
    d = str(tmp_path_factory.mktemp("zoo"))
    zoo.build_zoo(d)
    zoo.train_zoo(d)
    return d


@pytest.fixture(scope="session")
def zoo_bundle(zoo_dir):
    return zoo.load_zoo(zoo_dir)


def default_search_config(max_queries=50, **kw):
    return search.SearchConfig(
        pm=pm_mod.PMConfig(budget=pm_mod.Budget("linf", EPS)), max_queries=max_queries, **kw)


@pytest.fixture(scope="session")
def attack_batch(zoo_bundle):
    """Memoized attack batches; several criteria reuse the same runs.

    Returns records over the first ``n_images`` test images that the victim
    classifies correctly (the skip rule), in image order.
    """
    manifest, dataset, models = zoo_bundle
    test = dataset.test_split()
    cache = {}

    def run(victim_id, surrogate_ids, max_queries=50, policy="easiest",
            n_images=100, max_attacked=None, order="cyclic", order_seed=0):
        key = (victim_id, tuple(surrogate_ids), max_queries, policy,
               n_images, max_attacked, order, order_seed)
        if key in cache:
            return cache[key]
        victim = models[victim_id]
        surrogates = [models[s] for s in surrogate_ids]
        cfg = default_search_config(max_queries, order=order, order_seed=order_seed)
        records = []
        for i in range(min(n_images, len(test))):
            if max_attacked is not None and len(records) >= max_attacked:
                break
            img, y = test.images[i], int(test.labels[i])
            z = nn.forward(victim, img)
            if int(np.argmax(z)) != y:
                continue
            target = harness.pick_target(z, policy, y, rng=stream(7, f"target/{i}"))
            goal = losses.AttackGoal("targeted", target)
            out = search.bases_attack(img, goal, oracle.LocalOracle(victim), surrogates, cfg)
            records.append({"index": i, "label": y, "goal": goal,
                            "success": out.success, "q_used": out.q_used})
        cache[key] = records
        return records

    return run


@pytest.fixture(scope="session")
def fuzz_runs():
    """500 bases_attack trajectories over random tiny ensembles and goals.

    Every run uses monotone_three_way (the default) so the corpus serves
    both the accounting and the monotonicity suites. Each entry carries the
    outcome plus everything needed to audit it.
    """
    runs = []
    for k in range(500):
        s = stream(11, f"fuzz/{k}")
        n = 1 + int(s.integer(4))
        surrogates = [util.tiny_model(1000 * k + j, arch=int(s.integer(4))) for j in range(n)]
        vic_kind = int(s.integer(5))
        if vic_kind == 0:
            victim = util.const_model(hot=int(s.integer(util.TINY_CLASSES)))
        elif vic_kind == 1:
            victim = surrogates[int(s.integer(n))]
        else:
            victim = util.tiny_model(7000 + k, arch=int(s.integer(4)))
        mode = "targeted" if int(s.integer(2)) else "untargeted"
        goal = losses.AttackGoal(mode, int(s.integer(util.TINY_CLASSES)))
        norm = "linf" if int(s.integer(3)) else "l2"
        eps = 0.12 if norm == "linf" else 0.8
        q_max = 1 + int(s.integer(12))
        cfg = search.SearchConfig(
            pm=pm_mod.PMConfig(budget=pm_mod.Budget(norm, eps), steps=3),
            max_queries=q_max,
            order="random" if int(s.integer(2)) else "cyclic",
            order_seed=k)
        x = util.rand_image(k)
        orc = oracle.LocalOracle(victim, "soft")
        out = search.bases_attack(x, goal, orc, surrogates, cfg)
        runs.append({"outcome": out, "cfg": cfg, "goal": goal, "x": x,
                     "n": n, "oracle": orc})
    return runs
