import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from hrpro.data import GtInstance, PointAnnotation, VideoRecord
from hrpro.pipeline import desk_config, run_experiment
from hrpro.synthetic import GenSpec, generate_corpus, split_corpus

settings.register_profile("hrpro", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "hrpro"))

torch.set_num_threads(1)


def make_record(T=8, D=4, points=((3, 0),), gts=None, vid="v0", seed=0, dur=0.64):
    rng = np.random.default_rng(seed)
    pts = [PointAnnotation(t, c) for t, c in points]
    g = None if gts is None else [GtInstance(float(s), float(e), c) for s, e, c in gts]
    return VideoRecord(vid, rng.standard_normal((T, D)).astype(np.float32), dur, pts, g)


@pytest.fixture
def record():
    return make_record()


TINY_SPEC = GenSpec(n_videos=12, n_classes=2, T_range=(40, 60), D=8, instances_per_video=(1, 2),
                    instance_len_range=(6, 14), n_test_videos=4, seed=3)


@pytest.fixture(scope="session")
def tiny_split():
    recs = generate_corpus(TINY_SPEC)
    return split_corpus(recs, TINY_SPEC.n_test_videos)


@pytest.fixture(scope="session")
def tiny_run(tiny_split):
    """A few epochs of both stages on the tiny corpus; shared by the slower tests."""
    train, test = tiny_split
    cfg = desk_config(epochs_snippet=6, epochs_instance=4, seed=0)
    return cfg, run_experiment(train, test, TINY_SPEC.n_classes, cfg)


# the end-to-end acceptance corpus: 40 train / 20 test, C=3, T in [80, 160]
STANDARD_SPEC = GenSpec(n_videos=60, n_test_videos=20, n_classes=3, T_range=(80, 160), class_separation=0.8, seed=0)


@pytest.fixture(scope="session")
def standard_split():
    return split_corpus(generate_corpus(STANDARD_SPEC), STANDARD_SPEC.n_test_videos)


@pytest.fixture(scope="session")
def desk_run(standard_split):
    """Both stages at 30 epochs each on the standard corpus, timed."""
    import time
    train, test = standard_split
    cfg = desk_config(seed=0)
    t0 = time.perf_counter()
    res = run_experiment(train, test, STANDARD_SPEC.n_classes, cfg)
    res["runtime_sec"] = time.perf_counter() - t0
    return cfg, res


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
