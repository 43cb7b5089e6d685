import json

import numpy as np
import pytest

from s3kit.cli import main, resolve_threads
from s3kit.patterns import two_four
from s3kit.skt import decode_skt, read_skt, write_skt


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def files(tmp_path):
    rng = np.random.default_rng(0)
    M, K, N = 8, 16, 64
    w, x, s = tmp_path / "w.skt", tmp_path / "x.skt", tmp_path / "spec.json"
    write_skt(w, rng.standard_normal((M, K)).astype(np.float32))
    write_skt(x, rng.standard_normal((N, K)))
    s.write_text(json.dumps(two_four(M, K).to_json()))
    return tmp_path, w, x, s


def prune_args(tmp, w, x, s, *extra, tag=""):
    return [
        "prune", "--spec", s, "--weights", w, "--calib", x,
        "--out-weights", tmp / f"o{tag}.skt", "--out-mask", tmp / f"m{tag}.skt", "--out-report", tmp / f"r{tag}.json",
        *extra,
    ]


# -- validate -----------------------------------------------------------------


def test_validate_ok(capsys, files):
    _, _, _, s = files
    assert run(capsys, "validate", s)[0] == 0
    assert run(capsys, "validate", "--spec", s)[0] == 0


def test_validate_violation_names_dimension(capsys, tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"view": {"shape": [4, 8], "stride": [8, 1]}, "block": [1, 3], "scope": [1, 1], "keep": 1}))
    code, _, err = run(capsys, "validate", p)
    assert code == 1
    assert err.strip().splitlines() == ["block dim 1: 3 does not divide 8"]


def test_validate_truncated_and_missing(capsys, files, tmp_path):
    _, _, _, s = files
    t = tmp_path / "trunc.json"
    t.write_text(s.read_text()[:25])
    assert run(capsys, "validate", t)[0] == 2
    assert run(capsys, "validate", tmp_path / "nope.json")[0] == 2
    t.write_text('{"view": {"shape": [4], "stride": [1]}}')
    assert run(capsys, "validate", t)[0] == 2


# -- pattern -------------------------------------------------------------------


def test_pattern_two_four(capsys, tmp_path):
    code, out, _ = run(capsys, "pattern", "two_four", "M=4", "K=8")
    assert code == 0
    assert '"scope":[1,4]' in out and '"keep":2' in out
    p = tmp_path / "p.json"
    p.write_text(out)
    assert run(capsys, "validate", p)[0] == 0


def test_pattern_col16_and_nm(capsys):
    _, out, _ = run(capsys, "pattern", "col16_block", "K=32")
    assert json.loads(out)["view"]["stride"] == [32, 256, 1]
    _, out, _ = run(capsys, "pattern", "nm", "N=1", "M=2", "K=8")
    doc = json.loads(out)
    assert doc["keep"] == 1 and doc["scope"][-1] == 2


@pytest.mark.parametrize("argv", [["pattern", "bogus"], ["pattern", "two_four", "M=4", "K=6"], ["pattern", "two_four", "M=x", "K=8"], ["pattern", "two_four", "M4"]])
def test_pattern_errors(capsys, argv):
    code, out, err = run(capsys, *argv)
    assert code == 1 and out == "" and err


def test_pattern_coupling_round_trips(capsys, tmp_path):
    _, out, _ = run(capsys, "pattern", "head", "h=2", "d=8")
    p = tmp_path / "h.json"
    p.write_text(out)
    assert run(capsys, "validate", p)[0] == 0


# -- quote ---------------------------------------------------------------------


def test_quote(capsys):
    _, out, _ = run(capsys, "quote", "standard_24", 16)
    assert json.loads(out)["ratio"] == {"num": 9, "den": 16}
    _, out, _ = run(capsys, "quote", "coupled_24", 16)
    assert json.loads(out)["ratio"] == {"num": 17, "den": 32}
    _, out, _ = run(capsys, "quote", "coupled_24", 4)
    assert json.loads(out)["mask_overhead"] == 0.25
    _, out, _ = run(capsys, "quote", "standard_24", 4)
    assert json.loads(out)["mask_overhead"] == 0.5
    assert run(capsys, "quote", "coupled_24", 12)[0] == 1


# -- prune -----------------------------------------------------------------------


def test_prune_outputs(capsys, files):
    tmp, w, x, s = files
    assert run(capsys, *prune_args(tmp, w, x, s, "--seed", 7))[0] == 0
    W = read_skt(w)
    out, dtype = decode_skt((tmp / "o.skt").read_bytes())
    assert dtype == "f32" and out.shape == W.shape
    mask, mdtype = decode_skt((tmp / "m.skt").read_bytes())
    assert mdtype == "f32" and set(np.unique(mask)) == {0.0, 1.0}
    assert np.all(mask.reshape(8, 4, 4).sum(axis=2) == 2)
    assert np.all(out[mask == 0] == 0)
    report = json.loads((tmp / "r.json").read_text())
    assert report["seed"] == 7 and report["method"] == "s-obs" and report["order_mode"] == "greedy"
    assert 0 < report["relative_output_error"] < 1
    assert len(report["per_scope"]) == 32
    assert all(len(r["retained"]) == 2 for r in report["per_scope"])


def test_keep_all_is_bit_identical(capsys, files):
    tmp, w, x, s = files
    for method in ("s-obs", "sparsegpt", "s-obd", "wanda"):
        assert run(capsys, *prune_args(tmp, w, x, s, "--keep", 4, "--method", method))[0] == 0
        assert read_skt(tmp / "o.skt").tobytes() == read_skt(w).tobytes()
        assert json.loads((tmp / "r.json").read_text())["relative_output_error"] == 0.0


def test_obd_and_wanda_agree_with_uniform_column_norms(capsys, files):
    tmp, w, _, s = files
    q = np.linalg.qr(np.random.default_rng(1).standard_normal((16, 16)))[0]
    x = tmp / "xu.skt"
    write_skt(x, q * 3.0)  # every column has norm 3
    run(capsys, *prune_args(tmp, w, x, s, "--method", "s-obd", tag="a"))
    run(capsys, *prune_args(tmp, w, x, s, "--method", "wanda", tag="b"))
    assert (tmp / "ma.skt").read_bytes() == (tmp / "mb.skt").read_bytes()


def test_prune_shape_mismatch_removes_outputs(capsys, files):
    tmp, w, x, s = files
    (tmp / "o.skt").write_bytes(b"stale")
    bad = tmp / "x_bad.skt"
    write_skt(bad, np.ones((4, 12)))
    code, _, err = run(capsys, *prune_args(tmp, w, bad, s))
    assert code == 1 and "calibration shape" in err
    assert not (tmp / "o.skt").exists() and not (tmp / "r.json").exists()


def test_prune_invalid_spec(capsys, files):
    tmp, w, x, _ = files
    s = tmp / "bad.json"
    s.write_text(json.dumps({"view": {"shape": [8, 16], "stride": [16, 1]}, "block": [1, 3], "scope": [1, 1], "keep": 1}))
    assert run(capsys, *prune_args(tmp, w, x, s))[0] == 1
    s.write_text(json.dumps(two_four(4, 16).to_json()))
    assert run(capsys, *prune_args(tmp, w, x, s))[0] == 1
    assert not any(p.name.startswith(("o", "m", "r")) for p in tmp.iterdir())


def test_prune_corrupt_tensor(capsys, files):
    tmp, _, x, s = files
    w = tmp / "bad.skt"
    w.write_bytes(b"SKTENSR\0garbage")
    assert run(capsys, *prune_args(tmp, w, x, s))[0] == 2


def test_threads_resolution(monkeypatch):
    monkeypatch.delenv("S3KIT_THREADS", raising=False)
    assert resolve_threads(None) == 1
    assert resolve_threads(3) == 3
    monkeypatch.setenv("S3KIT_THREADS", "5")
    assert resolve_threads(None) == 5
    assert resolve_threads(2) == 2
    assert resolve_threads(0) >= 1


def test_thread_count_does_not_change_outputs(capsys, files):
    tmp, w, x, s = files
    for t in (1, 0):
        assert run(capsys, *prune_args(tmp, w, x, s, "--threads", t, tag=str(t)))[0] == 0
    assert (tmp / "o1.skt").read_bytes() == (tmp / "o0.skt").read_bytes()
    assert (tmp / "m1.skt").read_bytes() == (tmp / "m0.skt").read_bytes()


# -- verify -------------------------------------------------------------------------


def test_verify_is_hidden_and_runs(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    assert "verify" not in capsys.readouterr().out
    code, out, _ = run(capsys, "verify", "--scale", "0.05")
    assert code == 0
    assert len(out.strip().splitlines()) == 5 and all(l.startswith("[PASS]") for l in out.strip().splitlines())
