"""Exit criteria for the build, one test (or group) per criterion.

Criteria that need the published NSL-KDD files read them from the directory
named by ``NSLKDD_DIR`` (KDDTrain+_20Percent.txt, KDDTest+.txt) and fail
when it is not set. A pass/fail line per criterion is printed at the end of
the session.
"""
import math
import random
import re
import shutil
import time

import numpy as np
import pytest
import yaml

from conftest import nslkdd_file
from nsagen.cli import main
from nsagen.dataset import DEFAULT_SCHEMA, Label, load_records, split_self
from nsagen.detection import classify_all
from nsagen.discretizer import EncodedSample, assign_bin, compute_bin_width, encode_all, fit
from nsagen.evaluation import format_reports, grid, rates, score, sweep
from nsagen.ga import (
    Detector,
    GAConfig,
    SelfProfile,
    distance,
    evolve,
    replace_step,
)

C_DISC = "Discretizer oracle (1,000 cases, monotone + equal-width on NSL-KDD fits, < 1 s)"
C_METRIC = "Metric suite (axioms on 1,000 pairs, p=2/p=1 reductions to 1e-9, < 1 s)"
C_FIT = "Fitness oracle (50 toy self sets vs naive double loop, exact)"
C_ALG = "Steady-state GA semantics (4 replace branches, nondecreasing max fitness, 200 gens)"
C_DET = "Determinism (two fit->train->evaluate pipelines byte-identical)"
C_REGIME = "Regime replication (pop 200, gen 200, Euclidean; TPR>=0.90, FNR<=0.10, TNR<=0.65, dr in [0.60, 0.80])"
C_SWEEP = "Reduced sweep (8 cells, no failures; pop-200 dr observation recorded)"
C_DATA = "Dataset integrity (normal count = independent count = 13449; 18 features)"

TRAIN_20 = "KDDTrain+_20Percent.txt"
TEST_PLUS = "KDDTest+.txt"


def scan_bin(value, boundaries):
    idx = 0
    for b in boundaries:
        if value >= b:
            idx += 1
        else:
            break
    return idx


# --------------------------------------------------------------------------

@pytest.mark.criterion(C_DISC)
def test_discretizer_oracle_random_cases():
    rng = random.Random(20240601)
    t0 = time.perf_counter()
    for _ in range(1000):
        x_min = rng.uniform(-500, 500)
        x_max = x_min + rng.choice([rng.uniform(1e-4, 1), rng.uniform(1, 1e5)])
        k = rng.randint(1, 12)
        delta = compute_bin_width(x_min, x_max, k)
        bounds = [x_min + i * delta for i in range(1, k)]
        v = rng.choice([rng.uniform(x_min - 10, x_max + 10), x_min, x_max,
                        bounds[rng.randrange(len(bounds))] if bounds else x_min])
        assert assign_bin(v, x_min, delta, k) == scan_bin(v, bounds)
    assert time.perf_counter() - t0 < 1.0


@pytest.fixture(scope="module")
def kdd_train():
    return load_records(nslkdd_file(TRAIN_20))


@pytest.fixture(scope="module")
def kdd_model(kdd_train):
    return fit(split_self(kdd_train), DEFAULT_SCHEMA)


@pytest.mark.criterion(C_DISC)
def test_discretizer_invariants_on_nslkdd_fits(kdd_train, kdd_model):
    t0 = time.perf_counter()
    for name, fb in kdd_model.bins.items():
        b = [fb.x_min] + fb.boundaries + [fb.x_max]
        widths = np.diff(b)
        assert np.all(widths >= 0)
        # equal width up to rounding of the boundary arithmetic
        assert np.allclose(widths, fb.delta, rtol=0, atol=4 * np.spacing(max(abs(fb.x_max), 1)))
        probes = sorted([fb.x_min, fb.x_max, *fb.boundaries,
                         *np.linspace(fb.x_min - 1, fb.x_max + 1, 200).tolist()])
        bins = [fb.assign(v) for v in probes]
        assert bins == sorted(bins)
        assert all(fb.assign(v) == scan_bin(v, fb.boundaries) for v in probes) or fb.delta == 0
    assert time.perf_counter() - t0 < 1.0


# --------------------------------------------------------------------------

@pytest.mark.criterion(C_METRIC)
def test_metric_suite():
    rng = np.random.default_rng(17)
    metrics = [("euclidean", None), ("hamming", None), ("minkowski", 0.5), ("minkowski", 18)]
    t0 = time.perf_counter()
    for _ in range(1000):
        x, y, z = (rng.integers(0, 10, 18).tolist() for _ in range(3))
        for m, p in metrics:
            assert distance(x, x, m, p) == 0
            d = distance(x, y, m, p)
            assert d >= 0 and d == distance(y, x, m, p)
            if p is None or p >= 1:
                assert distance(x, z, m, p) <= d + distance(y, z, m, p) + 1e-9
        assert math.isclose(distance(x, y, "minkowski", 2), distance(x, y, "euclidean"),
                            rel_tol=1e-9)
        assert math.isclose(distance(x, y, "minkowski", 1), distance(x, y, "hamming"),
                            rel_tol=1e-9)
    assert time.perf_counter() - t0 < 1.0


# --------------------------------------------------------------------------

@pytest.mark.criterion(C_FIT)
def test_fitness_oracle():
    rng = random.Random(4242)
    for _ in range(50):
        L = rng.randint(1, 8)
        domains = [rng.randint(1, 4) for _ in range(L)]
        protos = [tuple(rng.randrange(d) for d in domains) for _ in range(rng.randint(1, 5))]
        n = rng.randint(1, 1000)
        samples = [EncodedSample(rng.choice(protos) if rng.random() < 0.7 else
                                 tuple(rng.randrange(d) for d in domains), Label.NORMAL)
                   for _ in range(n)]
        profile = SelfProfile(samples)
        probes = set(protos) | {tuple(rng.randrange(d) for d in domains) for _ in range(10)}
        for g in probes:
            a = 0
            for s in samples:
                if all(x == y for x, y in zip(g, s.genes)):
                    a += 1
            assert profile.fitness(g) == a / n


# --------------------------------------------------------------------------

@pytest.mark.criterion(C_ALG)
def test_replace_branches():
    p1, p2 = Detector((0, 0, 0), 0.2), Detector((6, 6, 6), 0.1)
    # replace parent1: closer to p1 and fitter than p1
    c = Detector((1, 0, 0), 0.3)
    assert replace_step(p1, p2, c) == (c, p2)
    # replace parent2: closer to p2 and fitter than p2
    c = Detector((6, 6, 5), 0.15)
    assert replace_step(p1, p2, c) == (p1, c)
    # tie d1 == d2 routes to the parent2 branch
    q1, q2 = Detector((0, 0), 0.5), Detector((2, 2), 0.1)
    c = Detector((1, 1), 0.3)
    assert replace_step(q1, q2, c) == (q1, c)
    # no replacement: not fitter than either parent
    c = Detector((1, 0, 0), 0.05)
    assert replace_step(p1, p2, c) == (p1, p2)
    # literal nesting: closer to p1, fitter than p2 only -> nothing happens
    c = Detector((1, 0, 0), 0.15)
    assert replace_step(p1, p2, c) == (p1, p2)


@pytest.mark.criterion(C_ALG)
def test_max_fitness_nondecreasing_toy_run():
    rng = random.Random(8)
    domains = [3, 4, 2, 5, 2]
    protos = [tuple(rng.randrange(d) for d in domains) for _ in range(4)]
    samples = [EncodedSample(rng.choice(protos) if rng.random() < 0.6 else
                             tuple(rng.randrange(d) for d in domains), Label.NORMAL)
               for _ in range(500)]
    trace, pop = [], []
    evolve(GAConfig(population_size=30, generations=200, rng_seed=1), samples, domains,
           trace=trace, population_out=pop)
    assert len(trace) == 200 and len(pop) == 30
    best = [t.best for t in trace]
    assert all(b2 >= b1 for b1, b2 in zip(best, best[1:]))


# --------------------------------------------------------------------------

def _pipeline_files(tmp_path, train, test):
    cfg = tmp_path / "run.yaml"
    out = tmp_path / "out"
    cfg.write_text(yaml.safe_dump({
        "train": str(train), "tests": [str(test)], "out": str(out),
        "population_size": 200, "generations": 50, "seed": 20240229}))
    runs = []
    for _ in range(2):
        if out.exists():
            shutil.rmtree(out)
        for cmd in ("fit", "train", "evaluate"):
            assert main([cmd, "--config", str(cfg)]) == 0
        runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.is_file()})
    return runs


@pytest.mark.criterion(C_DET)
def test_pipeline_determinism(tmp_path, synth_dir):
    a, b = _pipeline_files(tmp_path, synth_dir / "SynthTrain.txt", synth_dir / "SynthTest.txt")
    assert {"detectors.jsonl", "report.csv", "report.json", "report.txt"} <= set(a)
    assert a == b


# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def kdd_test(kdd_model):
    return encode_all(load_records(nslkdd_file(TEST_PLUS)), kdd_model)


@pytest.mark.criterion(C_REGIME)
def test_regime_replication(kdd_train, kdd_model, kdd_test, capsys):
    self_set = encode_all(split_self(kdd_train), kdd_model)
    cfg = GAConfig(population_size=200, generations=200, metric="euclidean", rng_seed=1)
    ds = evolve(cfg, self_set, kdd_model.domain_sizes(),
                schema_fingerprint=kdd_model.fingerprint)
    r = rates(score(classify_all(kdd_test, ds), kdd_test))
    with capsys.disabled():
        print(f"\n  KDDTest+: dr={r.dr:.4f} tpr={r.tpr:.4f} tnr={r.tnr:.4f} "
              f"fpr={r.fpr:.4f} fnr={r.fnr:.4f} detectors={len(ds)}")
    assert r.tpr >= 0.90
    # published "FPR" counts normal traffic flagged, which is fnr here
    assert r.fnr <= 0.10
    assert r.tnr <= 0.65
    assert 0.60 <= r.dr <= 0.80


@pytest.mark.criterion(C_SWEEP)
def test_reduced_sweep(kdd_train, kdd_model, kdd_test, tmp_path, capsys):
    self_set = encode_all(split_self(kdd_train), kdd_model)
    configs = grid([200, 600], [200, 1000], ["euclidean", "minkowski:0.5"], master_seed=7)
    reports = sweep(configs, self_set, {"KDDTest+": kdd_test}, kdd_model.domain_sizes(),
                    schema_fingerprint=kdd_model.fingerprint)
    assert len(reports) == 8
    assert not [r for r in reports if r.error]
    table = format_reports(reports, "table-text")
    dr200 = np.mean([r.dr for r in reports if r.pop_size == 200])
    dr600 = np.mean([r.dr for r in reports if r.pop_size == 600])
    note = (f"# observation (not gated): mean dr pop=200 {dr200:.4f} vs pop=600 "
            f"{dr600:.4f}; published runs found pop=200 generally better\n")
    (tmp_path / "reduced_sweep.txt").write_text(table + note)
    with capsys.disabled():
        print("\n" + table + note)


# --------------------------------------------------------------------------

@pytest.mark.criterion(C_DATA)
def test_dataset_integrity(kdd_train):
    path = nslkdd_file(TRAIN_20)
    pattern = re.compile(r",normal,\d+\s*$")
    independent = sum(1 for line in path.open() if pattern.search(line))
    normal = split_self(kdd_train)
    assert len(normal) == independent == 13449
    assert all(len(s.values) == DEFAULT_SCHEMA.L == 18 for s in kdd_train)
