import json
import xml.etree.ElementTree as ET

import pytest

from zcurvemeta.cli import format_report, main
from zcurvemeta.evidence import save_model_space
from zcurvemeta.model import Bias, ModelSpace, ModelSpec, Prior, SPIKE_ZERO
from zcurvemeta.results import SCHEMA_VERSION, dumps, load_fit

FAST = ["--chains", "2", "--iter", "400", "--warmup", "300", "--importance-samples", "5000"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def small_space(workdir):
    mu = Prior("normal", (0.0, 1.0))
    tau = Prior("invgamma", (1.0, 0.15))
    from zcurvemeta.model import WeightFunction

    specs = (
        ModelSpec("fe", mu, SPIKE_ZERO, Bias("none"), 0.25),
        ModelSpec("re", mu, tau, Bias("none"), 0.25),
        ModelSpec("sel", mu, tau, Bias("selection", WeightFunction("one-sided", (0.05,))), 0.25),
        ModelSpec("pet", mu, tau, Bias("pet"), 0.25),
    )
    path = workdir / "space.json"
    save_model_space(ModelSpace(specs), path)
    return path


@pytest.fixture(scope="module")
def fitted(workdir, small_space):
    data = workdir / "sim.csv"
    assert main(["simulate", "--k", "60", "--bias", "moderate", "--seed", "1", "--out", str(data)]) == 0
    out = workdir / "fit.json"
    assert main(["fit", str(data), "--space", str(small_space), "--out", str(out), *FAST]) == 0
    return data, out


def test_simulate_row_count_and_determinism(workdir):
    a, b = workdir / "a.csv", workdir / "b.csv"
    assert main(["simulate", "--k", "300", "--bias", "none", "--seed", "1", "--out", str(a)]) == 0
    assert len(a.read_text().splitlines()) == 301
    assert main(["simulate", "--k", "300", "--bias", "none", "--seed", "1", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (workdir / "a.provenance.json").exists()


def test_usage_errors_exit_2(workdir, capsys):
    for argv in (["simulate", "--out", str(workdir / "x.csv")],
                 ["simulate", "--k", "0", "--out", str(workdir / "x.csv")],
                 ["fit"], ["bogus"]):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2


def test_runtime_errors_exit_1(workdir, fitted, capsys):
    data, _ = fitted
    assert main(["fit", str(data), "--space", str(workdir / "missing.json"), "--out", str(workdir / "f.json")]) == 1
    assert "not found" in capsys.readouterr().err
    bad = workdir / "bad.csv"
    bad.write_text("y,se\n0.5,abc\n")
    assert main(["fit", str(bad), "--out", str(workdir / "f.json")]) == 1
    assert "row 1" in capsys.readouterr().err


def test_fit_document_contents(fitted):
    _, out = fitted
    doc = load_fit(out)
    assert doc["schema_version"] == SCHEMA_VERSION
    assert [m["name"] for m in doc["models"]] == ["fe", "re", "sel", "pet"]
    assert sum(m["posterior_prob"] for m in doc["models"]) == pytest.approx(1.0, abs=1e-12)
    assert set(doc["inclusion_bf"]) == {"heterogeneity", "bias"}
    assert doc["config"]["sampler"]["chains"] == 2
    assert doc["models"][2]["cutpoints"] == [pytest.approx(1.6448536269514722)]
    total = sum(len(m["draws"]["values"]) for m in doc["models"])
    assert total <= 10_000
    for key in ("edr", "fdr", "n_missing"):
        s = doc["bias_metrics"][key]
        assert s["lower"] <= s["median"] <= s["upper"]


def test_fit_json_round_trip(fitted, workdir):
    _, out = fitted
    doc = load_fit(out)
    again = workdir / "again.json"
    again.write_text(dumps(doc))
    assert load_fit(again) == doc
    assert again.read_bytes() == out.read_bytes()


def test_report_is_deterministic(fitted, capsys):
    _, out = fitted
    assert main(["report", str(out)]) == 0
    first = capsys.readouterr().out
    assert main(["report", str(out)]) == 0
    assert capsys.readouterr().out == first
    for label in ("ODR", "EDR", "FDR", "N missing", "BF bias", "BF heterogeneity", "mu (averaged)", "tau (averaged)"):
        assert label in first


def test_report_rejects_stale_schema(fitted, workdir, capsys):
    _, out = fitted
    doc = json.loads(out.read_text())
    doc["schema_version"] = 0
    stale = workdir / "stale.json"
    stale.write_text(json.dumps(doc))
    assert main(["report", str(stale)]) == 1
    assert "schema_version" in capsys.readouterr().err


def test_plot_outputs(fitted, workdir):
    data, out = fitted
    svg = workdir / "z.svg"
    assert main(["plot", str(out), str(data), "--curves", "re,robma", "--extrapolate", "--band", "0.9",
                 "--draws", "200", "--out", str(svg)]) == 0
    root = ET.fromstring(svg.read_bytes())
    assert root.tag.endswith("svg")
    header = svg.with_suffix(".csv").read_text().splitlines()[0]
    assert "curve_robma_extrapolated" in header
    first = svg.read_bytes()
    assert main(["plot", str(out), str(data), "--curves", "re,robma", "--extrapolate", "--band", "0.9",
                 "--draws", "200", "--out", str(svg)]) == 0
    assert svg.read_bytes() == first


def test_plot_single_curve_and_unknown_name(fitted, workdir, capsys):
    data, out = fitted
    svg = workdir / "one.svg"
    assert main(["plot", str(out), str(data), "--curves", "re", "--draws", "50", "--out", str(svg)]) == 0
    assert len(ET.fromstring(svg.read_bytes()).findall(".//{http://www.w3.org/2000/svg}polyline")) == 1
    with pytest.raises(SystemExit) as exc:
        main(["plot", str(out), str(data), "--curves", "nope", "--out", str(svg)])
    assert exc.value.code == 2
    assert "available" in capsys.readouterr().err


def test_zero_bias_mass_falls_back(workdir, fitted, capsys):
    data, _ = fitted
    mu = Prior("normal", (0.0, 1.0))
    sp = ModelSpace((ModelSpec("fe", mu, SPIKE_ZERO, Bias("none"), 0.5),
                     ModelSpec("null", SPIKE_ZERO, SPIKE_ZERO, Bias("none"), 0.5)))
    path = workdir / "nobias.json"
    save_model_space(sp, path)
    out = workdir / "nobias_fit.json"
    assert main(["fit", str(data), "--space", str(path), "--out", str(out), *FAST]) == 0
    assert "zero posterior mass" in capsys.readouterr().err
    doc = load_fit(out)
    assert doc["bias_metrics"]["n_missing"]["upper"] == 0.0
    svg = workdir / "nb.svg"
    assert main(["plot", str(out), str(data), "--curves", "robma", "--extrapolate", "--draws", "50",
                 "--out", str(svg)]) == 0
    assert "extrapolated equals fitted" in capsys.readouterr().err
    rows = [r.split(",") for r in svg.with_suffix(".csv").read_text().splitlines()]
    head = rows[0]
    fit_col, ext_col = head.index("curve_robma"), head.index("curve_robma_extrapolated")
    assert all(r[fit_col] == r[ext_col] for r in rows[1:] if r[0] == "curve")


def test_negative_direction_flips(workdir, fitted, small_space):
    data, _ = fitted
    flipped = workdir / "neg.csv"
    lines = data.read_text().splitlines()
    flipped.write_text("\n".join([lines[0]] + [f"{-float(a)!r},{b}" for a, b in (l.split(",") for l in lines[1:])]) + "\n")
    a, b = workdir / "pos_fit.json", workdir / "neg_fit.json"
    assert main(["fit", str(data), "--space", str(small_space), "--out", str(a), *FAST]) == 0
    assert main(["fit", str(flipped), "--space", str(small_space), "--direction", "negative", "--out", str(b), *FAST]) == 0
    da, db = load_fit(a), load_fit(b)
    assert da["inclusion_bf"] == db["inclusion_bf"]
    assert db["config"]["direction"] == "negative"


def test_format_report_bounds(fitted):
    _, out = fitted
    text = format_report(load_fit(out))
    edr_line = next(l for l in text.splitlines() if l.startswith("EDR"))
    nums = [float(x) for x in edr_line.replace("[", " ").replace("]", " ").replace(",", " ").split()[1:]]
    assert all(0.0 <= v <= 1.0 for v in nums)
