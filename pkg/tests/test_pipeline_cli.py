import json
import shutil

import numpy as np
import pytest

from crcoupling.cli import EXIT_DATA, EXIT_INPUT, EXIT_OK, main
from crcoupling.errors import AlignmentError, InsufficientData
from crcoupling.ingest import load_session, scan_cohort, write_manifest
from crcoupling.pipeline import (AnalysisConfig, analysis_report, analyze_session, cohort_stats, compare_session,
                                 dumps_report, write_synth_cohort, write_synth_session)
from crcoupling.synth import SynthConfig


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def locked(tmp_path_factory):
    """One strongly 4:1 locked synthetic session written via the CLI."""
    out = tmp_path_factory.mktemp("locked")
    assert run("synth", "--out", out, "--epsilon", 2.5, "--seed", 1, "--duration", 180,
               "--rppg-jitter-ms", 0) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    out = tmp_path_factory.mktemp("cohort")
    write_synth_cohort(out, subjects=6, seed=3, duration_s=150)
    return out


def test_analyze_locked_session(locked, tmp_path):
    assert run("analyze", "--root", locked, "--out", tmp_path) == EXIT_OK
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["long_term"]["num_sync"] >= 1
    assert all(e["dominant_ratio"] == "4:1" for e in rep["episodes"])
    assert rep["bprsa"]["decline"]["anchor_count"] > 0
    for name in ("synchrogram.csv", "degree.csv", "bprsa.csv"):
        assert (tmp_path / name).stat().st_size > 0
    header = (tmp_path / "degree.csv").read_text().splitlines()[0]
    assert header == "t_s,degree,best_n,best_m"


def test_analyze_is_byte_identical(locked, tmp_path):
    for sub in ("a", "b"):
        assert run("analyze", "--root", locked, "--out", tmp_path / sub) == EXIT_OK
    for name in ("report.json", "synchrogram.csv", "degree.csv", "bprsa.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_analyze_direct_files(locked, tmp_path):
    resp = next(locked.glob("*_resp.csv"))
    bvp = next(locked.glob("*_bvp.csv"))
    assert run("analyze", "--resp", resp, "--bvp", bvp, "--out", tmp_path) == EXIT_OK
    assert json.loads((tmp_path / "report.json").read_text())["session"]["subject"] == "session"


def test_short_session_exits_with_data_code(tmp_path, capsys):
    run("synth", "--out", tmp_path / "s", "--duration", 30)
    assert run("analyze", "--root", tmp_path / "s", "--out", tmp_path / "o") == EXIT_DATA
    assert "insufficient" in capsys.readouterr().err


def test_missing_rppg_names_source(tmp_path, capsys):
    run("synth", "--out", tmp_path / "s", "--duration", 90)
    code = run("analyze", "--root", tmp_path / "s", "--source", "rppg", "--out", tmp_path / "o")
    assert code == EXIT_INPUT
    assert "rppg" in capsys.readouterr().err


def test_missing_manifest_is_input_error(tmp_path, monkeypatch):
    monkeypatch.delenv("CRC_COHORT_ROOT", raising=False)
    assert run("analyze", "--out", tmp_path) == EXIT_INPUT
    assert run("analyze", "--root", tmp_path / "nowhere", "--out", tmp_path) == EXIT_INPUT


def test_env_root(locked, tmp_path, monkeypatch):
    monkeypatch.setenv("CRC_COHORT_ROOT", str(locked))
    assert run("analyze", "--out", tmp_path) == EXIT_OK


def test_config_file_and_flag_override(locked, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"gamma_threshold": 0.5, "min_episode_s": 8.0}))
    assert run("analyze", "--root", locked, "--config", cfg, "--min-episode-s", 6,
               "--out", tmp_path / "o") == EXIT_OK
    used = json.loads((tmp_path / "o" / "report.json").read_text())["config"]
    assert used["gamma_threshold"] == 0.5 and used["min_episode_s"] == 6.0
    cfg.write_text(json.dumps({"window_beats": 51}))
    assert run("analyze", "--root", locked, "--config", cfg, "--out", tmp_path / "p") == EXIT_INPUT
    cfg.write_text(json.dumps({"colour": "red"}))
    assert run("analyze", "--root", locked, "--config", cfg, "--out", tmp_path / "p") == EXIT_INPUT


def test_report_subcommand(locked, tmp_path, capsys):
    run("analyze", "--root", locked, "--out", tmp_path)
    capsys.readouterr()
    assert run("report", tmp_path / "report.json") == EXIT_OK
    assert "4:1" in capsys.readouterr().out
    (tmp_path / "junk.json").write_text("[1, 2]")
    assert run("report", tmp_path / "junk.json") == EXIT_INPUT


def test_bprsa_subcommand(locked, tmp_path):
    assert run("bprsa", "--root", locked, "--out", tmp_path) == EXIT_OK
    doc = json.loads((tmp_path / "bprsa.json").read_text())
    assert doc["schema"] == "crcoupling.bprsa"
    rows = (tmp_path / "bprsa.csv").read_text().splitlines()
    assert rows[0] == "lag_s,decline,accelerate" and len(rows) == 202


# -- compare -------------------------------------------------------------------

def test_compare_duplicated_pulse(locked, tmp_path):
    bvp = next(locked.glob("*_bvp.csv"))
    resp = next(locked.glob("*_resp.csv"))
    assert run("compare", "--resp", resp, "--bvp", bvp, "--rppg", bvp, "--out", tmp_path) == EXIT_OK
    doc = json.loads((tmp_path / "comparison.json").read_text())
    assert doc["hr"]["mae"] == 0.0
    # a fully locked curve can be nearly flat; r is either exactly 1 or undefined
    assert doc["curve_pearson_r"] in (None, pytest.approx(1.0, abs=1e-12))


def test_compare_api_duplicated_pulse(tmp_path):
    cfg = SynthConfig(heart_hz=1.6, resp_hz=0.3, couple_n=5, epsilon=1.5, epsilon_mod_depth=3.0,
                      epsilon_mod_hz=1 / 60, rsa_gain=0.2, phase_noise=0.01, seed=5)
    desc = write_synth_session(tmp_path, cfg, "S1", "2", rppg_jitter_s=0.0)
    res = compare_session(load_session(desc), AnalysisConfig(), desc)
    assert res.curve_r == pytest.approx(1.0, abs=1e-12)
    assert res.hr_agreement.mae == 0.0


def test_compare_without_overlap_raises_alignment(tmp_path):
    d1 = write_synth_session(tmp_path, SynthConfig(duration_s=120, seed=1), "A", "1", rppg_jitter_s=0.0)
    session = load_session(d1)
    # shift the camera pulse by half a beat interval so no beat pairs within the gap
    rppg = session.rppg
    shifted = type(rppg)(rppg.samples, rppg.rate_hz, rppg.start_s + 0.45, rppg.label)
    s2 = type(session)(session.subject_id, session.stage, session.resp, session.bvp, shifted)
    with pytest.raises(AlignmentError):
        compare_session(s2, AnalysisConfig())


# -- stats ---------------------------------------------------------------------

def test_cohort_contrast(cohort, tmp_path, capsys):
    assert run("stats", "--root", cohort, "--metrics", "NumSync,FreqRatio", "--out", tmp_path) == EXIT_OK
    doc = json.loads((tmp_path / "cohort.json").read_text())
    ns = doc["metrics"]["num_sync"]
    assert ns["recovery"]["mean"] > ns["stationary"]["mean"]
    assert ns["wilcoxon"]["p"] < 0.05
    assert doc["metrics"]["freq_ratio"]["recovery"]["mean"] > doc["metrics"]["freq_ratio"]["stationary"]["mean"]
    assert "NumSync" not in doc["metrics"] and "num_sync" in capsys.readouterr().out


def test_cohort_jobs_match_serial(cohort):
    index = scan_cohort(cohort, "manifest.csv")
    a = cohort_stats(index, metrics=["Max"], jobs=1)
    b = cohort_stats(index, metrics=["Max"], jobs=2)
    assert dumps_report(a) == dumps_report(b)


def test_identical_states_have_no_p(cohort, tmp_path):
    index = scan_cohort(cohort, "manifest.csv")
    rest = [d for d in index.sessions if d.stage_code == "1"]
    lines = ["subject,stage,repetition,resp_path,bvp_path"]
    for d in rest:
        for code in ("1", "2"):
            lines.append(f"{d.subject_id},{code},1,{d.resp_path.name},{d.bvp_path.name}")
    (tmp_path / "m.csv").write_text("\n".join(lines) + "\n")
    for d in rest:
        shutil.copy(d.resp_path, tmp_path / d.resp_path.name)
        shutil.copy(d.bvp_path, tmp_path / d.bvp_path.name)
    rep = cohort_stats(scan_cohort(tmp_path, "m.csv"), metrics=["Max"])
    assert rep["metrics"]["max_pct"]["wilcoxon"]["p"] in (None, 1.0)


def test_single_subject_is_insufficient(cohort, tmp_path):
    index = scan_cohort(cohort, "manifest.csv")
    write_manifest(tmp_path / "m.csv", index.find(subject="S01"), root=cohort)
    with pytest.raises(InsufficientData):
        cohort_stats(scan_cohort(cohort, tmp_path / "m.csv"))
    assert run("stats", "--root", cohort, "--manifest", tmp_path / "m.csv") == EXIT_DATA


def test_unknown_metric(cohort):
    assert run("stats", "--root", cohort, "--metrics", "Bogus") == EXIT_INPUT


# -- synth ---------------------------------------------------------------------

def test_synth_default_loads(tmp_path):
    assert run("synth", "--out", tmp_path) == EXIT_OK
    index = scan_cohort(tmp_path, "manifest.csv")
    assert len(index) == 1
    s = load_session(index.sessions[0])
    assert s.resp.rate_hz == 50.0 and s.bvp.rate_hz == 20.0


def test_synth_seed_is_reproducible(tmp_path):
    for sub in ("a", "b"):
        run("synth", "--out", tmp_path / sub, "--seed", 7, "--duration", 90, "--rsa-gain", 0.2)
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_synth_uncoupled_has_low_degree(tmp_path):
    run("synth", "--out", tmp_path / "s", "--epsilon", 0, "--rsa-gain", 0, "--heart-hz", 1.2,
        "--resp-hz", 1.2 / (3 + (1 + 5 ** 0.5) / 2))
    run("analyze", "--root", tmp_path / "s", "--out", tmp_path / "o")
    degree = np.loadtxt(tmp_path / "o" / "degree.csv", delimiter=",", skiprows=1)[:, 1]
    assert np.median(degree) < 0.15


def test_synth_cohort_flag(tmp_path):
    assert run("synth", "--out", tmp_path, "--cohort", 2, "--duration", 90) == EXIT_OK
    assert len(scan_cohort(tmp_path, "manifest.csv")) == 4


def test_synth_bad_config(tmp_path):
    assert run("synth", "--out", tmp_path, "--rsa-gain", 2) == EXIT_INPUT


def test_analysis_api_report_is_json_safe(locked):
    index = scan_cohort(locked, "manifest.csv")
    res = analyze_session(load_session(index.sessions[0]), AnalysisConfig(), index.sessions[0])
    text = dumps_report(analysis_report(res))
    assert json.loads(text)["schema"] == "crcoupling.analysis"
