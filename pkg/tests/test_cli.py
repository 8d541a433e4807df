import json

import pytest

from apsmon import cli, scs
from apsmon.simulation import load_campaign

from conftest import SMALL_CAMPAIGN


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    camp = root / "campaign.json"
    camp.write_text(json.dumps(SMALL_CAMPAIGN))
    assert cli.main(["simulate", str(camp), "--out", str(root / "base")]) == 0
    assert cli.main(["learn", str(root / "base"), "--out", str(root / "thr")]) == 0
    assert cli.main(["eval", str(root / "base"), "--out", str(root / "ev"), "--thresholds", str(root / "thr")]) == 0
    assert cli.main(["mitigate-eval", str(root / "base"), "--out", str(root / "mit"),
                     "--thresholds", str(root / "thr")]) == 0
    return root


def test_simulate_writes_campaign(work):
    traces = load_campaign(work / "base")
    assert len(traces) == 2 * 7 * 9
    man = json.loads((work / "base" / "manifest.json").read_text())
    assert man["command"] == "simulate" and man["seed"] == 2
    assert man["output_hash"] == cli.hash_dir(work / "base")


def test_same_seed_same_bytes(work, tmp_path):
    assert cli.main(["simulate", str(work / "campaign.json"), "--out", str(tmp_path / "again")]) == 0
    assert cli.hash_dir(tmp_path / "again") == cli.hash_dir(work / "base")
    assert cli.main(["simulate", str(work / "campaign.json"), "--out", str(tmp_path / "other"), "--seed", "9"]) == 0
    assert cli.hash_dir(tmp_path / "other") != cli.hash_dir(work / "base")


def test_learn_output(work):
    thr = work / "thr"
    for patient in ("patientA", "patientD"):
        for i in range(4):
            ts = scs.ThresholdSet.load(thr / patient / f"fold{i}.json")
            assert set(ts.slots) == set(scs.SLOT_NAMES)
            assert ts.provenance["fold"] == i and ts.provenance["patient"] == patient
            assert "training_hash" in ts.provenance
            assert (thr / patient / f"fold{i}_log.csv").read_text().startswith("slot,iteration,objective,pg_norm")
        assert (thr / patient / "all.json").exists()
    folds = json.loads((thr / "folds.json").read_text())
    assert len(folds) == 2 * 7 * 9


def test_eval_output(work):
    ev = work / "ev"
    summary = json.loads((ev / "metrics.json").read_text())
    assert set(summary["monitors"]) == {"cawt", "cawot", "guideline", "mpc"}
    rows = (ev / "per_trace.csv").read_text().splitlines()
    assert len(rows) == 1 + 4 * 2 * 7 * 9
    assert (ev / "tth_hist.dat").read_text().startswith("# bin_left count")
    assert (ev / "reaction_cawt_hist.dat").exists()


def test_mitigation_output(work):
    rec = json.loads((work / "mit" / "recovery.json").read_text())
    assert rec["monitor"] == "cawt" and rec["n"] == 2 * 7 * 9
    assert len(load_campaign(work / "mit" / "traces")) == rec["n"]


def test_paired_mitigation_from_existing_campaign(work, tmp_path):
    out = tmp_path / "paired"
    assert cli.main(["mitigate-eval", str(work / "base"), str(work / "mit" / "traces"), "--out", str(out)]) == 0
    assert json.loads((out / "recovery.json").read_text()) == json.loads((work / "mit" / "recovery.json").read_text())


def test_report(work, tmp_path, capsys):
    out = tmp_path / "report.txt"
    assert cli.main(["report", "--eval", str(work / "ev"), "--mitigation", str(work / "mit"), "--out", str(out)]) == 0
    text = out.read_text()
    for col in ("FPR", "FNR", "ACC", "F1", "Recovery Rate", "No. New Hazard", "Avg. Risk", "TTH", "Hazard coverage"):
        assert col in text
    assert text in capsys.readouterr().out


def test_label_is_idempotent(work, tmp_path):
    out = tmp_path / "lab"
    assert cli.main(["label", str(work / "base"), "--out", str(out)]) == 0
    first = (out / "manifest.json").read_text()
    assert cli.main(["label", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert cli.hash_dir(out) == cli.hash_dir(work / "base")
    assert man["output_hash"] == json.loads(first)["output_hash"]
    assert man["stages"] == []


def test_in_place_stage_history(work, tmp_path):
    import shutil

    d = tmp_path / "copy"
    shutil.copytree(work / "base", d)
    assert cli.main(["label", str(d), "--window", "6"]) == 0
    man = json.loads((d / "manifest.json").read_text())
    assert man["command"] == "label"
    assert [s["command"] for s in man["stages"]] == ["simulate"]


def test_configuration_errors(work, tmp_path, capsys):
    assert cli.main(["eval", str(tmp_path / "missing"), "--out", str(tmp_path / "x")]) == 2
    assert cli.main(["eval", str(work / "base"), "--out", str(tmp_path / "x"), "--monitors", "cawt"]) == 2
    assert cli.main(["eval", str(work / "base"), "--out", str(tmp_path / "x"), "--monitors", "oracle"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"patients": ["nobody"]}))
    assert cli.main(["simulate", str(bad), "--out", str(tmp_path / "y")]) == 2
    assert cli.main(["simulate", str(work / "campaign.json"), "--out", str(tmp_path / "y"), "--mitigate"]) == 2
    assert cli.main(["report"]) == 2
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 2
