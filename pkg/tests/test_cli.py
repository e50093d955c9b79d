"""Config parsing, exit codes, and the CSV contract of the front end."""

import os
from pathlib import Path

import pytest

from stopsearch import __version__, cli
from stopsearch.errors import ConfigError

PRICE_TEXT = """\
# two-asset benchmark at toy scale
process.kind = gbm
process.dim = 2
process.rate = 0.05
process.dividend = 0.10
process.vol = 0.2
process.spot = 90.0
process.horizon = 3.0
process.dates = 3

payoff.kind = maxcall
payoff.strike = 100.0
payoff.discounted = true

region.kind = maxcall
region.lower = 0.0
region.upper = 50.0

optimizer.grid_points = 5
optimizer.refine_rounds = 1
optimizer.refine_top_k = 2

plan.seed = 4242
plan.batch_size = 200
plan.fresh_size = 500
plan.replications = 2
"""

QCURVES_EXTRA = """\
plan.batch_grid = 100, 200, 400
plan.fresh_grid = 50 200 500
"""

RATES_TEXT = """\
process.kind = none
plan.seed = 1
rates.alpha = 1.0
rates.rho = 0.0
rates.fresh_grid = 10000
"""

ORACLE_TEXT = """\
process.kind = chain
process.max_states = 3
process.max_dates = 3
plan.seed = 77
plan.instances = 4
plan.region_pairs = 2
"""

ADVERSARIAL_TEXT = """\
process.kind = bump
payoff.kind = digital
payoff.alpha = 1.0
payoff.amp = 0.25
region.kind = bumps
region.gamma = 1.0
region.height = 0.5
plan.seed = 9
plan.batch_grid = 64 128
plan.replications = 3
"""


def _qcurves_text():
    return PRICE_TEXT + QCURVES_EXTRA


def test_parse_shipped_configs():
    root = Path(__file__).resolve().parents[1] / "configs"
    for name, sub in (
        ("benchmark.conf", "price"),
        ("qcurves.conf", "qcurves"),
        ("oracle.conf", "oracle-check"),
        ("adversarial.conf", "adversarial"),
        ("rates.conf", "rates"),
    ):
        cfg = cli.parse_config((root / name).read_text(), sub)
        assert cfg.subcommand == sub
        assert cfg.seed >= 0


def test_empty_config_reports_missing_sections():
    with pytest.raises(ConfigError) as err:
        cli.parse_config("", "price")
    messages = err.value.errors
    for section in ("process", "payoff", "region", "plan"):
        assert f"missing section: {section}" in messages


def test_duplicate_key_reports_both_lines():
    text = PRICE_TEXT + "\nplan.seed = 11\n"
    with pytest.raises(ConfigError) as err:
        cli.parse_config(text, "price")
    dup = [m for m in err.value.errors if "duplicate key 'plan.seed'" in m]
    assert len(dup) == 1
    assert "first set at line" in dup[0]


def test_scan_error_kinds():
    text = RATES_TEXT + (
        "process.bogus = 1\n"
        "nosuch.x = 1\n"
        "plan.batch_size = abc\n"
        "payoff.discounted = yes\n"
        "loose line\n"
    )
    with pytest.raises(ConfigError) as err:
        cli.parse_config(text, "rates")
    joined = "\n".join(err.value.errors)
    assert "unknown key 'process.bogus'" in joined
    assert "unknown section 'nosuch'" in joined
    assert "plan.batch_size expects int, got 'abc'" in joined
    assert "payoff.discounted expects flag, got 'yes'" in joined
    assert "expected 'section.key = value'" in joined


def test_unknown_subcommand_rejected():
    with pytest.raises(ConfigError):
        cli.parse_config(RATES_TEXT, "frobnicate")


def test_overrides_and_thread_resolution(tmp_path):
    cfg = cli.parse_config(
        RATES_TEXT, "rates", seed_override=5, out_override=str(tmp_path), threads=0
    )
    assert cfg.seed == 5
    assert cfg.out_dir == tmp_path
    assert cfg.threads == (os.cpu_count() or 1)
    with pytest.raises(ConfigError):
        cli.parse_config(RATES_TEXT, "rates", threads=-1)
    with pytest.raises(ConfigError):
        cli.parse_config(RATES_TEXT, "rates", seed_override=-3)


def test_main_missing_config_returns_one(tmp_path, capsys):
    assert cli.main(["rates", "--config", str(tmp_path / "absent.conf")]) == 1
    assert "cannot read config" in capsys.readouterr().err


def test_main_invalid_config_returns_one(tmp_path, capsys):
    path = tmp_path / "empty.conf"
    path.write_text("")
    assert cli.main(["price", "--config", str(path)]) == 1
    assert "missing section" in capsys.readouterr().err


def test_rates_prints_budget_exponent(tmp_path, capsys):
    path = tmp_path / "rates.conf"
    path.write_text(RATES_TEXT)
    assert cli.main(["rates", "--config", str(path)]) == 0
    out = capsys.readouterr().out
    assert "upper_rate_exponent = 0.66666666666666663" in out
    assert "batch_for_fresh exponent = 0.75" in out
    assert "batch_for_fresh(10000) = 1000" in out


def _run_price(tmp_path, name, threads, plots=False):
    conf = tmp_path / "price.conf"
    conf.write_text(PRICE_TEXT)
    out = tmp_path / name
    argv = [
        "price", "--config", str(conf), "--out", str(out), "--threads", str(threads),
    ]
    if not plots:
        argv.append("--no-plots")
    assert cli.main(argv) == 0
    return out


def test_price_csv_contract(tmp_path, capsys):
    out = _run_price(tmp_path, "out", threads=1)
    stats = (out / "stats.csv").read_text().splitlines()
    assert stats[0] == "l,theta1,theta2,v_mn,sigma_l"
    assert stats[1] == f"# seed=4242 version={__version__}"
    assert len(stats) == 2 + 2  # one row per replication
    for line in stats[2:]:
        fields = line.split(",")
        assert int(fields[0]) >= 1
        for raw in fields[1:]:
            assert format(float(raw), ".17g") == raw  # round-trip exact
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0] == "M,N,L,mu,vartheta,sigma_min"
    m, n, l = summary[2].split(",")[:3]
    assert (int(m), int(n), int(l)) == (200, 500, 2)
    assert "[PRICE] mu=" in capsys.readouterr().out
    assert not (out / "replicas.png").exists()


def test_price_plots_written_by_default(tmp_path):
    out = _run_price(tmp_path, "plotted", threads=1, plots=True)
    assert (out / "replicas.png").stat().st_size > 0


def test_price_threads_do_not_change_bytes(tmp_path):
    one = _run_price(tmp_path, "one", threads=1)
    many = _run_price(tmp_path, "many", threads=3)
    for name in ("stats.csv", "summary.csv"):
        assert (one / name).read_bytes() == (many / name).read_bytes()


def test_qcurves_writes_all_tables(tmp_path, capsys):
    conf = tmp_path / "q.conf"
    conf.write_text(_qcurves_text())
    out = tmp_path / "q"
    argv = ["qcurves", "--config", str(conf), "--out", str(out), "--no-plots"]
    assert cli.main(argv) == 0
    for name in ("q1.csv", "q2.csv", "q3.csv", "mn.csv", "decomp.csv"):
        lines = (out / name).read_text().splitlines()
        assert lines[1] == f"# seed=4242 version={__version__}"
        assert len(lines) > 2
    assert "[QCURVES] mu_ref=" in capsys.readouterr().out


def test_oracle_check_passes(tmp_path, capsys):
    conf = tmp_path / "oracle.conf"
    conf.write_text(ORACLE_TEXT)
    assert cli.main(["oracle-check", "--config", str(conf), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "[OK]" in out and "[FAIL]" not in out


def test_adversarial_smoke(tmp_path, capsys):
    conf = tmp_path / "adv.conf"
    conf.write_text(ADVERSARIAL_TEXT)
    out = tmp_path / "adv"
    argv = ["adversarial", "--config", str(conf), "--out", str(out), "--no-plots"]
    assert cli.main(argv) == 0
    assert (out / "regret.csv").exists()
    line = capsys.readouterr().out
    assert "[ADVERSARIAL] slope=" in line and "margin_ok=true" in line


def test_adversarial_bump_list_length_checked(tmp_path):
    text = ADVERSARIAL_TEXT + "region.bumps = 2\n"
    with pytest.raises(ConfigError) as err:
        cli.parse_config(text, "adversarial")
    assert any("one bump count per" in m for m in err.value.errors)
