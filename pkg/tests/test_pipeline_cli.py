import json
from pathlib import Path

import pytest

from invguard.cli import main
from invguard.config import AnalysisConfig
from invguard.errors import EmptyCorpus
from invguard.manifest import APPLIED, INSUFFICIENT
from invguard.pipeline import Pipeline
from invguard.scenarios import ERC20_ABI, TOKEN_LAYOUT, eth_vault_corpus, mapping_fixture
from invguard.store import write_fixture


def _pipeline(fixtures, cache, **extra):
    cfg = json.loads((Path(fixtures) / "config.json").read_text())
    cfg.update(fixtures=str(fixtures), cacheDir=str(cache), **extra)
    return Pipeline(AnalysisConfig.from_dict(cfg))


@pytest.fixture
def small(tmp_path):
    c = eth_vault_corpus(n=3)
    c.config["trainFraction"] = 0.5
    return c.write(tmp_path / "fx")


def test_parse_idempotent(small, tmp_path):
    pl = _pipeline(small, tmp_path / "cache")
    res = pl.parse()
    assert (len(res.parsed), len(res.cached), res.skipped) == (3, 0, [])
    assert len(list((tmp_path / "cache" / "analysis").glob("*.json"))) == 3
    again = _pipeline(small, tmp_path / "cache").parse()
    assert (again.work, len(again.cached)) == (0, 3)


def test_malformed_trace_is_skipped(small, tmp_path):
    idx = json.loads((small / "index.json").read_text())
    (small / idx["transactions"][1]["trace"]).write_text("{not json")
    pl = _pipeline(small, tmp_path / "cache")
    res = pl.parse()
    assert len(res.parsed) == 2
    assert [s["txHash"] for s in res.skipped] == [idx["transactions"][1]["txHash"]]
    assert json.loads((tmp_path / "cache" / "skipped.json").read_text())["skipped"] == res.skipped
    assert _pipeline(small, tmp_path / "cache").parse().work == 0
    train, test, _ = pl.observations()
    assert len(train) + len(test) == 2


def test_empty_corpus(tmp_path):
    fx = write_fixture(tmp_path / "fx", "0x" + "11" * 20, [], config={"target": "0x" + "11" * 20})
    with pytest.raises(EmptyCorpus):
        _pipeline(fx, tmp_path / "cache").parse()


def test_test_split_must_be_nonempty(tmp_path):
    metas, traces, layout, token = mapping_fixture()
    fx = write_fixture(tmp_path / "fx", token, list(zip(metas, traces)), {token: ERC20_ABI}, {token: TOKEN_LAYOUT},
                       {"target": token, "trainFraction": 0.99})
    pl = _pipeline(fx, tmp_path / "cache")
    m = pl.infer()
    # each selector is called exactly once
    lu = {i.location: i.status for i in m.for_template("LU") if i.location in ("0x095ea7b3", "0xa9059cbb")}
    assert lu == {"0x095ea7b3": INSUFFICIENT, "0xa9059cbb": INSUFFICIENT}
    assert {i.status for i in m.for_template("EOA") if i.location == "0xa9059cbb"} == {APPLIED}
    with pytest.raises(EmptyCorpus):
        pl.check(m)


def test_infer_all_eoa(harvest_dir, tmp_path):
    m = _pipeline(harvest_dir, tmp_path / "c").infer()
    eoa = [i for i in m.for_template("EOA") if i.status != INSUFFICIENT]
    assert eoa and all(i.status == APPLIED for i in eoa)


def _full_run(fixtures, cache, **extra):
    pl = _pipeline(fixtures, cache, **extra)
    pl.parse()
    m = pl.infer()
    pl.check(m)
    pl.combine(m)
    pl.report(m)
    return {p.name: p.read_bytes() for p in Path(cache).iterdir() if p.is_file()}


def test_determinism_across_runs_and_parallelism(harvest_dir, tmp_path):
    a = _full_run(harvest_dir, tmp_path / "a")
    b = _full_run(harvest_dir, tmp_path / "b", parallelism=4)
    assert set(a) >= {"manifest.json", "report.csv", "report.json", "verdicts.json", "combinations.json"}
    assert a == b


def test_metric2_respects_fp_limit(harvest_dir, tmp_path):
    pl = _pipeline(harvest_dir, tmp_path / "c")
    doc = pl.combine(pl.infer())
    assert doc["metric2"]
    assert all(s["benignBlocked"] * 100 < s["benignTotal"] for s in doc["metric2"])
    assert doc["metric2"][0]["hacksBlocked"] == 1


def test_cli_end_to_end(harvest_dir, tmp_path, capsys):
    base = ["--fixtures", str(harvest_dir), "--cache-dir", str(tmp_path / "c")]
    for cmd in ("parse", "infer", "check", "combine", "report"):
        assert main([cmd, *base]) == 0
    out = capsys.readouterr().out
    rows = [line.split() for line in out.splitlines() if line[:1].isupper() and len(line.split()) >= 2]
    cells = {r[0]: r[1] for r in rows if r[0] in ("EOA", "SM", "GC", "TBU", "LU")}
    allowed = {"-", "✗", "∅"}
    for cell in cells.values():
        assert cell in allowed or float(cell) >= 0
    rep = json.loads((tmp_path / "c" / "report.json").read_text())
    assert {r["cell"] for r in rep if r["status"] != APPLIED} <= allowed
    assert next(r for r in rep if r["template"] == "EOA")["tp"]


def test_cli_exit_codes(harvest_dir, tmp_path):
    base = ["--fixtures", str(harvest_dir), "--cache-dir", str(tmp_path / "c")]
    assert main(["parse", *base, "--train-fraction", "1.5"]) == 1
    assert main(["parse", *base, "--templates", "NOPE"]) == 1
    assert main(["parse", "--target", "0x1234"]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    # data errors: missing fixture directory, missing manifest
    assert main(["parse", "--fixtures", str(tmp_path / "nowhere"), "--target", "0x" + "11" * 20]) == 2
    assert main(["check", *base]) == 2


def test_manifest_for_other_target_rejected(harvest_dir, tmp_path):
    pl = _pipeline(harvest_dir, tmp_path / "c")
    pl.infer()
    other = _pipeline(harvest_dir, tmp_path / "c", target="0x" + "22" * 20)
    from invguard.errors import ConfigError
    with pytest.raises(ConfigError):
        other.load_manifest()
