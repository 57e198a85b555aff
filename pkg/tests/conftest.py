import os
import random
from pathlib import Path

import pytest

from nsagen.dataset import NSL_KDD_COLUMNS

# A few "normal" connection shapes repeated with small jitter, and attack
# traffic spread over the feature space. Enough structure for a GA to find
# detectors that cover most normal records.
NORMAL_SHAPES = [
    dict(protocol_type="tcp", service="http", flag="SF", logged_in=1, count=2,
         same_srv_rate=1.0, diff_srv_rate=0.0, srv_diff_host_rate=0.0),
    dict(protocol_type="tcp", service="smtp", flag="SF", logged_in=1, count=1,
         same_srv_rate=1.0, diff_srv_rate=0.0, srv_diff_host_rate=0.0),
    dict(protocol_type="udp", service="domain_u", flag="SF", logged_in=0, count=120,
         same_srv_rate=1.0, diff_srv_rate=0.0, srv_diff_host_rate=0.0),
    dict(protocol_type="tcp", service="ftp_data", flag="SF", logged_in=1, count=5,
         same_srv_rate=1.0, diff_srv_rate=0.0, srv_diff_host_rate=0.2),
]


def make_fields(label="normal", difficulty=20, **overrides):
    rec = {c: "0" for c in NSL_KDD_COLUMNS}
    rec.update(protocol_type="tcp", service="http", flag="SF")
    for k, v in overrides.items():
        assert k in rec, k
        rec[k] = str(v)
    fields = [rec[c] for c in NSL_KDD_COLUMNS] + [label]
    if difficulty is not None:
        fields.append(str(difficulty))
    return fields


def make_line(label="normal", difficulty=20, **overrides):
    return ",".join(make_fields(label, difficulty, **overrides))


def synthetic_lines(n_normal, n_attack, seed):
    rng = random.Random(seed)
    lines = []
    for _ in range(n_normal):
        shape = dict(rng.choice(NORMAL_SHAPES[:3] if rng.random() < 0.9 else NORMAL_SHAPES))
        shape["duration"] = rng.choice([0] * 12 + [rng.randint(0, 4000)])
        shape["count"] = max(0, shape["count"] + rng.choice([0, 0, 0, 1]))
        shape["src_bytes"] = rng.randint(100, 5000)
        if rng.random() < 0.03:
            shape["hot"] = rng.randint(1, 30)
        if rng.random() < 0.02:
            shape["num_file_creations"] = rng.randint(1, 40)
        if rng.random() < 0.02:
            shape["num_shells"] = rng.randint(1, 2)
            shape["num_failed_logins"] = rng.randint(0, 3)
        if rng.random() < 0.05:
            shape["same_srv_rate"] = round(rng.uniform(0.05, 1.0), 2)
            shape["diff_srv_rate"] = round(rng.uniform(0.0, 0.9), 2)
        lines.append(make_line("normal", rng.randint(15, 21), **shape))
    attacks = ["neptune", "smurf", "satan", "portsweep", "guess_passwd", "back"]
    for _ in range(n_attack):
        proto = rng.choice(["tcp", "udp", "icmp"])
        svc = rng.choice(["private", "ecr_i", "http", "telnet", "other", "eco_i", "ftp"])
        rec = dict(protocol_type=proto, service=svc, flag=rng.choice(["S0", "REJ", "SF"]),
                   count=rng.randint(0, 511),
                   same_srv_rate=round(rng.random(), 2),
                   diff_srv_rate=round(rng.random(), 2),
                   srv_diff_host_rate=round(rng.random(), 2),
                   logged_in=rng.randint(0, 1), duration=rng.choice([0, rng.randint(0, 40000)]))
        if rng.random() < 0.15:
            # attacks that look like normal web traffic
            rec.update(NORMAL_SHAPES[0])
        if rng.random() < 0.1:
            rec["num_failed_logins"] = rng.randint(1, 5)
        if rng.random() < 0.1:
            rec["root_shell"] = 1
        if rng.random() < 0.05:
            rec["su_attempted"] = rng.choice([1, 2])
        lines.append(make_line(rng.choice(attacks), rng.randint(0, 21), **rec))
    rng.shuffle(lines)
    return lines


def write_synthetic(path, n_normal, n_attack, seed):
    path = Path(path)
    path.write_text("\n".join(synthetic_lines(n_normal, n_attack, seed)) + "\n")
    return path


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    write_synthetic(d / "SynthTrain.txt", 1500, 1200, seed=1)
    write_synthetic(d / "SynthTest.txt", 800, 1000, seed=2)
    return d


def nslkdd_dir():
    """Directory holding the published NSL-KDD text files, if configured."""
    d = os.environ.get("NSLKDD_DIR")
    return Path(d) if d else None


def nslkdd_file(name):
    d = nslkdd_dir()
    path = d / name if d else None
    if path is None or not path.is_file():
        pytest.fail(f"{name} not available: set NSLKDD_DIR to the directory with the "
                    f"published NSL-KDD files (this criterion needs the real data)")
    return path


# --------------------------------------------------------------------------
# acceptance summary: one pass/fail line per criterion

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion label")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        ok = call.excinfo is None
        prev = _criteria.get(name, True)
        _criteria[name] = prev and ok


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok in _criteria.items():
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}")
