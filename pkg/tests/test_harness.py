import csv
import io
import json
import math

import numpy as np
import pytest

from udlab import cli
from udlab.errors import ModelParseError, NotMemoryless, ValidationError
from udlab.harness import (
    CSV_HEADER,
    ExperimentConfig,
    capacity_memoryless,
    generate_codebook,
    load_codebook,
    load_model,
    model_from_induced,
    rows_to_csv,
    run,
    run_estimate,
    save_codebook,
    save_model,
)
from udlab.model import SystemModel, random_model
from udlab.verification import BoundReport


def bsc(p):
    return np.array([[1 - p, p], [p, 1 - p]])


def memoryless(g, V, W):
    nx = len(g)
    return SystemModel.from_kernels(np.reshape(g, (1, nx, 1)), V.reshape(nx, 1, -1, 1), W.reshape(nx, 1, -1, 1))


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return path


MINIMAL = {
    "alphabet": {"x": 2, "y": 2, "z": 2},
    "states": {"omega": 1, "sigma": 1, "theta": 1},
    "G": [0.3, 0.7],
    "V": [0.9, 0.1, 0.2, 0.8],
    "W": [0.6, 0.4, 0.1, 0.9],
}


def test_load_minimal_model(tmp_path):
    m = load_model(write_json(tmp_path / "m.json", MINIMAL))
    assert m.is_memoryless
    assert np.allclose(m.pi.table[0, :, 0], np.array([0.3, 0.7]) @ np.array([[0.9, 0.1], [0.2, 0.8]]))


def test_bad_row_is_named(tmp_path):
    doc = dict(MINIMAL, V=[0.9, 0.08, 0.2, 0.8])
    with pytest.raises(ValidationError, match=r"V: row \(0, 0\) sums to 0.98"):
        load_model(write_json(tmp_path / "m.json", doc))


@pytest.mark.parametrize("doc,msg", [
    ({k: v for k, v in MINIMAL.items() if k != "W"}, "missing key 'W'"),
    (dict(MINIMAL, G=[0.3, 0.3, 0.4]), "flat list of 2"),
    (dict(MINIMAL, alphabet={"x": 2, "y": 0, "z": 2}), "positive integer"),
    (dict(MINIMAL, G=["a", "b"]), "non-numeric"),
])
def test_parse_errors(tmp_path, doc, msg):
    with pytest.raises(ModelParseError, match=msg):
        load_model(write_json(tmp_path / "m.json", doc))


def test_invalid_json(tmp_path):
    p = tmp_path / "m.json"
    p.write_text("{not json")
    with pytest.raises(ModelParseError):
        load_model(p)


def test_round_trip(tmp_path):
    m = random_model(seed=3)
    p = tmp_path / "m.json"
    save_model(m, p)
    m2 = load_model(p)
    for a, b in ((m.G, m2.G), (m.V, m2.V), (m.W, m2.W), (m.pi.table, m2.pi.table)):
        assert np.max(np.abs(a - b)) <= 1e-15
    assert m2.states == m.states


def test_generate_codebook():
    m = random_model(seed=0)
    assert generate_codebook(m, 5, 0.0, 1).M == 1
    a = generate_codebook(m, 8, 0.3, 7)
    b = generate_codebook(m, 8, 0.3, 7)
    assert a.M == math.ceil(math.exp(2.4)) and np.array_equal(a.codewords, b.codewords)
    with pytest.raises(ValidationError):
        generate_codebook(m, 0, 0.1, 1)


def test_codebook_single_letter_frequency():
    m = random_model(seed=2)
    cb = generate_codebook(m, 1, 10.0, 3)  # M = 22027 codewords of length 1
    p1 = m.pi.table[m.pi.initial, 1, :].sum()
    freq = cb.codewords[:, 0].mean()
    assert abs(freq - p1) <= 3 * math.sqrt(p1 * (1 - p1) / cb.M)


def test_codebook_keeps_duplicates(tmp_path):
    m = memoryless([1.0, 0.0], np.array([[0.999999, 1e-6], [0.5, 0.5]]), bsc(0.1))
    cb = generate_codebook(m, 2, 1.0, 0)
    assert cb.M == 8 and len({tuple(r) for r in cb.codewords}) < cb.M
    p = tmp_path / "cb.json"
    save_codebook(cb, p)
    cb2 = load_codebook(p)
    assert np.array_equal(cb.codewords, cb2.codewords) and cb2.seed == 0


def test_capacity_examples():
    ident = memoryless([0.5, 0.5], np.eye(2), np.eye(2))
    assert capacity_memoryless(ident) == pytest.approx(math.log(2))
    indep = memoryless([0.5, 0.5], np.eye(2), np.array([[0.3, 0.7], [0.3, 0.7]]))
    assert capacity_memoryless(indep) == pytest.approx(0.0, abs=1e-15)
    p = 0.11
    m = memoryless([0.5, 0.5], np.eye(2), bsc(p))
    hb = -p * math.log(p) - (1 - p) * math.log(1 - p)
    assert capacity_memoryless(m) == pytest.approx(math.log(2) - hb, rel=1e-12)


def test_capacity_direct_double_sum():
    g = np.array([0.2, 0.5, 0.3])
    V = np.array([[0.7, 0.3], [0.4, 0.6], [0.1, 0.9]])
    W = np.array([[0.5, 0.25, 0.25], [0.1, 0.8, 0.1], [0.3, 0.3, 0.4]])
    m = memoryless(g, V, W)
    ref = 0.0
    for y in range(2):
        for z in range(3):
            pyz = sum(g[x] * V[x, y] * W[x, z] for x in range(3))
            py = sum(g[x] * V[x, y] for x in range(3))
            pz = sum(g[x] * W[x, z] for x in range(3))
            ref += pyz * math.log(pyz / (py * pz))
    assert capacity_memoryless(m) == pytest.approx(ref, rel=1e-12)


def test_capacity_refuses_memory():
    with pytest.raises(NotMemoryless):
        capacity_memoryless(random_model(seed=0))


def test_model_from_induced_preserves_pi():
    m = random_model(seed=1, theta=1)
    wrapped = model_from_induced(m.pi)
    assert np.allclose(wrapped.pi.table, m.pi.table)


@pytest.fixture
def model_file(tmp_path):
    p = tmp_path / "model.json"
    save_model(random_model(seed=1), p)
    return p


def test_config_validation():
    with pytest.raises(ValidationError):
        ExperimentConfig(mode="nope")
    with pytest.raises(ValidationError):
        ExperimentConfig(mode="exact", rate=-1)
    with pytest.raises(ValidationError):
        ExperimentConfig(mode="monte-carlo", trials=0)
    with pytest.raises(ValidationError):
        ExperimentConfig(mode="exact", alpha=0.5)


def test_run_exact_rows(model_file):
    rows = run(ExperimentConfig(mode="exact", model=str(model_file), n=[2, 4], decoders=["ml", "universal"]))
    assert len(rows) == 4
    assert all(0.0 <= r["value"] <= 1.0 for r in rows)
    text = rows_to_csv(rows)
    parsed = list(csv.reader(io.StringIO(text)))
    assert parsed[0] == CSV_HEADER
    assert len(parsed) == 5


def test_run_monte_carlo_byte_identical(model_file):
    cfg = ExperimentConfig(mode="monte-carlo", model=str(model_file), n=[3], trials=500, seed=4,
                           decoders=["ml", "universal", "threshold"])
    assert rows_to_csv(run(cfg)) == rows_to_csv(run(cfg))


def test_run_parse_rows():
    rows = run(ExperimentConfig(mode="parse", y="010001", z="010101"))
    vals = {r["metric"]: r["value"] for r in rows}
    assert vals["c_yz"] == 4 and vals["c_z"] == 3
    assert (vals["c_1"], vals["c_2"], vals["c_3"]) == (1, 1, 2)


def test_number_format_uses_17_digits(model_file):
    rows = run(ExperimentConfig(mode="exact", model=str(model_file), n=[2], decoders=["ml"]))
    value = list(csv.DictReader(io.StringIO(rows_to_csv(rows))))[0]["value"]
    assert float(value) == rows[0]["value"]
    assert value == "%.17g" % rows[0]["value"]


def test_cli_parse(capsys):
    assert cli.main(["parse", "--y", "010001", "--z", "010101"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[:3] == ["c(y,z)=4", "c(z)=3", "c_l=(1,1,2)"]


def test_cli_capacity(tmp_path, capsys):
    p = tmp_path / "m.json"
    save_model(memoryless([0.5, 0.5], np.eye(2), np.eye(2)), p)
    assert cli.main(["capacity", "--model", str(p)]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(math.log(2))


def test_cli_validation_exit_code(tmp_path, capsys):
    p = write_json(tmp_path / "bad.json", dict(MINIMAL, G=[0.5, 0.48]))
    assert cli.main(["exact-eval", "--model", str(p), "--n", "2"]) == 2
    assert "row (0,)" in capsys.readouterr().err
    assert cli.main(["capacity", "--model", str(tmp_path / "missing.json")]) == 2


def test_cli_simulate_and_exact_write_csv(model_file, tmp_path):
    out = tmp_path / "mc.csv"
    assert cli.main(["simulate", "--model", str(model_file), "--n", "3", "--trials", "300",
                     "--seed", "2", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["decoder"] for r in rows] == ["ml", "universal"]
    assert all(r["trials"] == "300" and r["seed"] == "2" for r in rows)
    out2 = tmp_path / "ex.csv"
    assert cli.main(["exact-eval", "--model", str(model_file), "--n", "2", "3", "--decoder", "threshold",
                     "--alpha", "2.5", "--out", str(out2)]) == 0
    assert len(list(csv.DictReader(out2.open()))) == 2


def test_cli_bounds_check_clean(model_file, tmp_path):
    out = tmp_path / "b.csv"
    assert cli.main(["bounds-check", "--model", str(model_file), "--n", "2", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert rows and all(r["holds"] == "1" for r in rows)


def test_cli_bounds_check_violation_exit_code(model_file, monkeypatch, capsys):
    import udlab.harness as harness

    def fake_sweep(model, n, R, log_alpha=None):
        return [BoundReport("fake", 2.0, 1.0, False, -1.0, {"n": n})]

    monkeypatch.setattr(harness, "bounds_sweep", fake_sweep)
    assert cli.main(["bounds-check", "--model", str(model_file), "--n", "2"]) == 3


def test_cli_codebook_estimate_and_plug_in(tmp_path, capsys):
    mfile = tmp_path / "m.json"
    save_model(random_model(seed=0, theta=1, sigma=1), mfile)
    cbfile = tmp_path / "cb.json"
    assert cli.main(["codebook", "--model", str(mfile), "--n", "50", "--rate", "0.06", "--seed", "1",
                     "--out", str(cbfile)]) == 0
    est = tmp_path / "est.json"
    assert cli.main(["estimate", "--codebook", str(cbfile), "--states", "2", "--max-iter", "30",
                     "--out", str(est)]) == 0
    assert "loglik=" in capsys.readouterr().out
    fitted = load_model(est)
    assert fitted.pi.n_states == 2 and fitted.pi_min >= 1e-6 * (1 - 1e-9)
    out = tmp_path / "p.csv"
    assert cli.main(["simulate", "--model", str(mfile), "--n", "8", "--decoder", "universal", "--trials", "200",
                     "--plug-in", str(est), "--out", str(out)]) == 0


def test_run_estimate_returns_trace(tmp_path):
    m = random_model(seed=2, theta=1)
    cbfile = tmp_path / "cb.json"
    save_codebook(generate_codebook(m, 40, 0.1, 3), cbfile)
    res = run_estimate(cbfile, 2, None, max_iter=10)
    assert len(res.loglik) >= 2 and np.all(np.diff(res.loglik) >= -1e-9)
