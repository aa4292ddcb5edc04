import json

import numpy as np
import pytest

from wqte import estimate_wqte
from wqte.cli import RunConfig, build_parser, file_digest, ingest_csv, main, parse_taus, write_csv
from wqte.errors import ConfigurationError, DataValidationError, GridError, IngestError, MappingError, ParameterError
from wqte.simulation import SimScenario, draw_replicate


def write(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture(scope="module")
def sim_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    dr = draw_replicate(SimScenario.homogeneous(n=600, seed=21), 0)
    write_csv(dr.observed, root / "observed.csv")
    write_csv(dr.complete, root / "complete.csv")
    return root, dr


def run_cli(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_three_row_file(tmp_path):
    path = write(tmp_path / "d.csv", "y,z,r,s,x1\n1.5,0,1,0,0.2\n,1,0,0,0.4\n2.5,1,0,1,0.9\n")
    d = ingest_csv(path)
    assert d.n == 3 and d.p == 1
    assert d.y_present.tolist() == [True, False, True]


def test_outcome_without_observance_names_row(tmp_path):
    path = write(tmp_path / "d.csv", "y,z,r,s,x1\n1.5,0,1,0,0.2\n3.0,1,0,0,0.4\n")
    with pytest.raises(IngestError) as info:
        ingest_csv(path)
    assert info.value.row == 2 and "row 2" in str(info.value)


def test_empty_outcome_with_observance(tmp_path):
    path = write(tmp_path / "d.csv", "y,z,r,s,x1\n,0,1,0,0.2\n")
    with pytest.raises(IngestError):
        ingest_csv(path)


def test_malformed_number_reports_cell(tmp_path):
    path = write(tmp_path / "d.csv", "y,z,r,s,x1\n1.0,0,1,0,abc\n")
    with pytest.raises(IngestError) as info:
        ingest_csv(path)
    assert (info.value.row, info.value.column) == (1, "x1")


def test_indicator_must_be_binary(tmp_path):
    path = write(tmp_path / "d.csv", "y,z,r,s,x1\n1.0,2,1,0,0.1\n")
    with pytest.raises(IngestError):
        ingest_csv(path)


def test_unknown_column(tmp_path):
    path = write(tmp_path / "d.csv", "y,z,r,s,age\n1.0,0,1,0,3\n")
    with pytest.raises(MappingError) as info:
        ingest_csv(path)
    assert info.value.column == "age"


def test_mapping_renames_columns(tmp_path):
    path = write(tmp_path / "d.csv", "bmi,arm,r,s,age\n1.0,0,1,0,30\n,1,0,0,40\n2.0,1,1,0,50\n")
    d = ingest_csv(path, {"y": "bmi", "z": "arm", "x1": "age"})
    assert d.column_names == ("age",)
    assert d.z.tolist() == [0, 1, 1]
    with pytest.raises(MappingError):
        ingest_csv(path, {"y": "weight"})


def test_missing_required_column(tmp_path):
    path = write(tmp_path / "d.csv", "y,z,r,x1\n1.0,0,1,0.2\n")
    with pytest.raises(MappingError):
        ingest_csv(path)


def test_invariant_violation_is_reported(tmp_path):
    path = write(tmp_path / "d.csv", "y,z,r,s,x1\n1.0,0,1,1,0.2\n2.0,1,1,0,0.1\n")
    with pytest.raises(DataValidationError):
        ingest_csv(path)


def test_csv_round_trip_gives_identical_estimates(sim_files):
    root, dr = sim_files
    d = ingest_csv(root / "observed.csv")
    np.testing.assert_array_equal(d.outcome_values(), dr.observed.outcome_values())
    a = estimate_wqte(dr.observed, "IV")
    b = estimate_wqte(d, "IV")
    np.testing.assert_array_equal(a.beta, b.beta)


def test_grid_parsing():
    assert parse_taus("0.1:0.9:0.2").taus == (0.1, 0.3, 0.5, 0.7, 0.9)
    assert parse_taus("0.25,0.75").taus == (0.25, 0.75)
    assert len(parse_taus(None)) == 9
    with pytest.raises(GridError):
        parse_taus("0.5,1.5")
    with pytest.raises(ConfigurationError):
        parse_taus("a,b")


def test_config_invariants():
    with pytest.raises(ParameterError):
        RunConfig("oracle", alpha=1.5, seed=1)
    with pytest.raises(ConfigurationError):
        RunConfig("band", input="x.csv")
    with pytest.raises(ConfigurationError):
        RunConfig("estimate", input="x.csv", variant="II")  # pairs bootstrap needs a seed
    assert RunConfig("estimate", input="x.csv", variant="II", se="none").resolved_se() == "none"


def test_estimate_writes_json_and_csv(sim_files, tmp_path, capsys):
    root, _ = sim_files
    out = tmp_path / "est.json"
    code, _, _ = run_cli(["estimate", "--input", str(root / "observed.csv"), "--output", str(out)], capsys)
    assert code == 0
    res = json.loads(out.read_text())
    assert res["tool"]["version"] and res["input_sha256"] == file_digest(root / "observed.csv")
    assert res["config"]["variant"] == "IV-ds-estimated" and res["method"] == "asymptotic"
    assert [r["tau"] for r in res["results"]] == pytest.approx([0.1 * k for k in range(1, 10)])
    lines = (tmp_path / "est.csv").read_text().splitlines()
    assert lines[0].startswith("# ") and lines[1] == "tau,beta0,beta,se,ci_lower,ci_upper"
    assert len(lines) == 11


def test_full_data_variants_agree_through_cli(sim_files, capsys):
    root, _ = sim_files
    betas = []
    for v in ("I", "IV"):
        code, out, _ = run_cli(["estimate", "--input", str(root / "complete.csv"), "--variant", v, "--se", "none"], capsys)
        assert code == 0
        betas.append([r["beta"] for r in json.loads(out)["results"]])
    assert betas[0] == betas[1]


def test_variant_three_with_known_propensity(sim_files, capsys):
    root, _ = sim_files
    args = ["estimate", "--input", str(root / "observed.csv"), "--variant", "III", "--true-e", "0.5,-0.5,-0.5"]
    code, out, _ = run_cli(args, capsys)
    assert code == 0 and json.loads(out)["config"]["true_e"] == [0.5, -0.5, -0.5]
    code, _, err = run_cli(args[:-1] + ["0.5,-0.5"], capsys)
    assert code == 1 and json.loads(err)["error"]["code"] == "configuration"


@pytest.mark.parametrize(
    "args",
    [
        ["estimate", "--variant", "II", "--se", "pairs", "--B", "30", "--seed", "4"],
        ["band", "--B", "60", "--seed", "4", "--eta-design", "saturated", "--strata", "x1:0.5,x2:1", "--allow-census"],
    ],
)
def test_stochastic_data_commands_are_byte_identical(sim_files, tmp_path, capsys, args):
    root, _ = sim_files
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}.json"
        code, _, _ = run_cli(args + ["--input", str(root / "observed.csv"), "--output", str(out)], capsys)
        assert code == 0
        outs.append((out.read_bytes(), out.with_suffix(".csv").read_bytes()))
    assert outs[0] == outs[1]


def test_band_output(sim_files, capsys):
    root, _ = sim_files
    code, out, _ = run_cli(["band", "--input", str(root / "observed.csv"), "--B", "60", "--seed", "2"], capsys)
    res = json.loads(out)
    assert code == 0 and res["method"] == "gradient-bootstrap"
    for row in res["results"]:
        assert row["band_lower"] <= row["ci_lower"] <= row["beta"] <= row["ci_upper"] <= row["band_upper"]
    assert res["rejects_no_effect"] is True


def test_oracle_and_simulate(tmp_path, capsys):
    scen = write(tmp_path / "s.json", json.dumps({"preset": "heterogeneous", "n": 250, "replications": 2}))
    code, out, _ = run_cli(["oracle", "--scenario", scen, "--seed", "3", "--draws", "50000"], capsys)
    assert code == 0 and json.loads(out)["oracle"]["draws"] == 50000
    files = []
    for k in range(2):
        out_path = tmp_path / f"sim{k}.json"
        code, _, _ = run_cli(["simulate", "--scenario", scen, "--seed", "3", "--draws", "50000", "--B", "20", "--output", str(out_path)], capsys)
        assert code == 0
        files.append(out_path.read_bytes())
    assert files[0] == files[1]
    rep = json.loads(files[0])["report"]
    assert rep["replications"] == 2 and rep["scenario"]["rho"] == 1.5


def test_validate_reports_positivity(sim_files, capsys):
    root, _ = sim_files
    code, out, _ = run_cli(["validate", "--input", str(root / "observed.csv")], capsys)
    res = json.loads(out)
    assert code == 0 and res["valid"]
    assert {p["target"] for p in res["report"]["positivity"]} == {"propensity", "double-sampling"}


def test_errors_are_machine_readable(tmp_path, capsys):
    path = write(tmp_path / "d.csv", "y,z,r,s,x1\n1.0,0,0,0,0.2\n")
    code, out, err = run_cli(["estimate", "--input", path], capsys)
    assert code == 1 and out == ""
    e = json.loads(err)["error"]
    assert e["type"] == "IngestError" and e["row"] == 1
    code, _, err = run_cli(["oracle"], capsys)
    assert code == 1 and "seed" in json.loads(err)["error"]["message"]
    code, _, err = run_cli(["estimate", "--input", str(tmp_path / "nope.csv")], capsys)
    assert code == 1


def test_warnings_keep_exit_status_zero(tmp_path, capsys):
    # 12 records: the density step warns about few effective observations
    rows = ["y,z,r,s,x1"]
    rng = np.random.default_rng(0)
    for i in range(12):
        r = 0 if i in (3, 8) else 1
        s = 1 if i in (3, 8) else 0
        rows.append(f"{rng.normal():.6f},{i % 2},{r},{s},{rng.normal():.6f}")
    rows.append(f",0,0,0,{rng.normal():.6f}")
    rows.append(f",1,0,0,{rng.normal():.6f}")
    path = write(tmp_path / "tiny.csv", "\n".join(rows) + "\n")
    code, out, err = run_cli(["estimate", "--input", path, "--variant", "IV"], capsys)
    assert code == 0 and "warning" in err


def test_parser_lists_commands():
    text = build_parser().format_help()
    for cmd in ("estimate", "band", "simulate", "oracle", "validate"):
        assert cmd in text
