import hashlib
import json

import numpy as np
import pytest
from scipy.stats import beta

from fmtss.harness import cli
from fmtss.harness.config import ExperimentConfig, derive_seed, load_config
from fmtss.harness.experiments import BASE_FIELDS, ber_row, binomial_ci, residual_overlap
from fmtss.harness.output import check_invariants, read_csv, write_csv
from fmtss.link import loopback


def test_config_defaults_and_round_trip(tmp_path):
    conf = ExperimentConfig()
    assert conf.u_values == [1, 8] and conf.K == 32
    path = tmp_path / "c.json"
    path.write_text(json.dumps(conf.to_dict()))
    assert load_config(path).digest() == conf.digest()


@pytest.mark.parametrize("kw", [dict(experiment="bogus"), dict(packets=0), dict(snr_db=[]), dict(u_values=[0]),
                                dict(u_values=[1.5]), dict(placement="zigzag"), dict(placements=["contiguous"]),
                                dict(channel="awgn"), dict(csi="genie")])
def test_config_rejects_invalid_values(kw):
    with pytest.raises(ValueError):
        ExperimentConfig(**kw)


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("experiment: ber\nsnr: [1, 2]\n")
    with pytest.raises(ValueError, match="unknown"):
        load_config(path)


def test_load_config_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("experiment: ber\npackets: 10\nmaster_seed: 3\n")
    conf = load_config(path, packets=7, master_seed=None)
    assert conf.packets == 7 and conf.master_seed == 3


def test_derive_seed_matches_hash_rule():
    text = "42/ber/8/-10.0/3"
    expected = int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1
    assert derive_seed(42, "ber", 8, -10.0, 3) == expected
    assert 0 <= expected < 2**63
    assert derive_seed(42, "ber", 8, -10.0, 4) != expected


@pytest.mark.parametrize("errors,bits", [(0, 100), (5, 1000), (1000, 1000), (37, 12345)])
def test_binomial_ci_matches_beta_quantiles(errors, bits):
    lo, hi = binomial_ci(errors, bits)
    ref_lo = 0.0 if errors == 0 else beta.ppf(0.025, errors, bits - errors + 1)
    ref_hi = 1.0 if errors == bits else beta.ppf(0.975, errors + 1, bits - errors)
    assert lo == pytest.approx(ref_lo, abs=1e-9)
    assert hi == pytest.approx(ref_hi, abs=1e-9)
    assert lo <= errors / bits <= hi


def test_binomial_ci_zero_bits():
    assert binomial_ci(0, 0) == (0.0, 1.0)


def _rows():
    return [ber_row("ber", 8, "random", -10.0, 100, 20000), ber_row("ber", 8, "random", -12.0, 300, 20000),
            ber_row("ber", 1, "contiguous", -10.0, 0, 20000, note="x")]


def test_csv_header_and_order(tmp_path):
    path = tmp_path / "out.csv"
    header = write_csv(_rows(), path)
    assert header[: len(BASE_FIELDS)] == list(BASE_FIELDS)
    assert header[len(BASE_FIELDS):] == ["note"]
    back = read_csv(path)
    assert [(r["u"], r["snr_db"]) for r in back] == [("1", "-10.0"), ("8", "-12.0"), ("8", "-10.0")]


def test_csv_output_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(_rows(), a)
    write_csv(list(reversed(_rows())), b)
    assert a.read_bytes() == b.read_bytes()


def test_invariants_accept_consistent_rows():
    assert check_invariants(_rows()) == []


def test_invariants_flag_violations():
    rows = _rows()
    rows[0]["errors"] = 30000
    assert any("outside [0" in v for v in check_invariants(rows))
    rows = _rows()
    rows[0]["ci_hi"] = 1e-4
    assert any("interval" in v for v in check_invariants(rows))
    rows = _rows()
    rows.append(ber_row("loopback", 2, "random", float("inf"), 1, 1000))
    assert any("loopback" in v for v in check_invariants(rows))
    rows = [ber_row("ber", 8, "random", -10.0, 900, 20000), ber_row("ber", 8, "random", -12.0, 100, 20000)]
    assert any("rises" in v for v in check_invariants(rows))


def test_invariants_ignore_small_cells_and_overlapping_intervals():
    rows = [ber_row("ber", 8, "random", -10.0, 12, 1000), ber_row("ber", 8, "random", -12.0, 1, 1000)]
    assert check_invariants(rows) == []
    rows = [ber_row("ber", 8, "random", -10.0, 102, 20000), ber_row("ber", 8, "random", -12.0, 100, 20000)]
    assert check_invariants(rows) == []


def test_residual_overlap_medians_do_not_grow_with_u():
    medians = [np.median(residual_overlap(32, u, 30)) for u in (1, 2, 4, 8)]
    assert all(b <= a for a, b in zip(medians, medians[1:]))
    assert medians[-1] < medians[0]


@pytest.mark.parametrize("u", [1, 2, 8])
def test_loopback_is_error_free(u):
    errors, sent = loopback(u, 4096, seed=u)
    assert sent == 4096 and errors == 0


def test_cli_loopback_writes_csv_and_manifest(tmp_path, capsys):
    out = tmp_path / "lb.csv"
    code = cli.main(["loopback", "-o", str(out), "--u", "1,2", "--packets", "1", "--n-bits", "256", "--seed", "5"])
    assert code == 0
    rows = read_csv(out)
    assert [r["u"] for r in rows] == ["1", "2"] and all(r["errors"] == "0" for r in rows)
    man = json.loads(out.with_suffix(".manifest.json").read_text())
    assert man["master_seed"] == 5 and man["invariant_violations"] == []
    assert "wrote 2 rows" in capsys.readouterr().out


def test_cli_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert cli.main(["papr", "-o", str(p), "--u", "2,4", "--trials", "3"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_cli_config_error_exit_code(tmp_path, capsys):
    assert cli.main(["ber", "-o", str(tmp_path / "x.csv"), "--packets", "0"]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("bogus_key: 1\n")
    assert cli.main(["ber", "-c", str(bad)]) == 2
    assert cli.main(["ber", "-c", str(tmp_path / "missing.yaml")]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_invariant_violation_exit_code(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(cli, "run_loopback", lambda conf: [ber_row("loopback", 1, "contiguous", float("inf"), 3, 100)])
    assert cli.main(["loopback", "-o", str(tmp_path / "lb.csv")]) == 1
    assert "invariant violated" in capsys.readouterr().err


def test_cli_precedence(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("packets: 9\nsnr_db: [0, 5]\nmaster_seed: 4\n")
    args = cli.build_parser().parse_args(["ber", "-c", str(cfg), "--packets", "3"])
    conf = cli.resolve_config(args)
    # flags beat the file, the file beats the subcommand defaults
    assert conf.packets == 3
    assert conf.snr_db == [0.0, 5.0]
    assert conf.master_seed == 4
    assert conf.output == "ber.csv"
    assert conf.experiment == "ber"


def test_cli_requires_subcommand():
    with pytest.raises(SystemExit):
        cli.main([])
