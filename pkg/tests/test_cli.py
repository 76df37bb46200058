import configparser
import csv
import subprocess
import sys
from pathlib import Path

import pytest

from caccsim.cli import EXIT_CONFIG, EXIT_OK, EXIT_VALIDATION, build_parser, main
from caccsim.config import ConfigError, config_from_text, known_keys, parse_events, parse_zones
from caccsim.dsrc import DEFAULT_TABLE
from caccsim.traffic import LanePolicy

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

SMOKE = """
[scenario]
policy = DL
mpr = 0.4
horizon_s = 120
warmup_s = 30
replications = 2
base_seed = 1
"""


def data_rows(text):
    return [line for line in text.splitlines() if line and not line.startswith("#")]


def test_curves_row_count(capsys):
    assert main(["curves", "--xi", "500,1500,3000", "--phi", "300", "--xmax", "300", "--dx", "1"]) == EXIT_OK
    rows = data_rows(capsys.readouterr().out)
    assert rows[0] == "x_m,xi,p_r"
    assert len(rows) - 1 == 3 * 301


def test_curves_to_file(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["curves", "--xi", "1000", "--dx", "10", "--output", str(out)]) == EXIT_OK
    rows = list(csv.reader(data_rows(out.read_text())))
    assert len(rows) == 1 + 31 and rows[1] == ["0.0", "1000.0", "1.0"]


def test_curves_bad_grid(capsys):
    assert main(["curves", "--dx", "0"]) == EXIT_CONFIG


def test_missing_config_no_outputs(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", str(tmp_path / "nope.ini"), "--output-dir", str(out)]) == EXIT_CONFIG
    assert not out.exists()


def test_bad_config_no_outputs(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[scenario]\nmpr = 1.7\n")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--output-dir", str(out)]) == EXIT_CONFIG
    assert not out.exists()


def test_unknown_flag_is_config_error():
    with pytest.raises(SystemExit) as exc:
        main(["run", "--config", "x.ini", "--frobnicate"])
    assert exc.value.code == EXIT_CONFIG


def test_missing_subcommand_is_config_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == EXIT_CONFIG


def test_help_lists_every_flag():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, sp in sub.choices.items():
        text = sp.format_help()
        for action in sp._actions:
            for opt in action.option_strings:
                assert opt in text, (name, opt)
    top = parser.format_help()
    for name in ("run", "sweep", "curves", "validate-coefficients"):
        assert name in top


def test_reference_config_documents_every_key():
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.read(CONFIGS / "reference.ini")
    for section, keys in known_keys().items():
        assert cp.has_section(section), section
        assert set(cp[section]) == set(keys), section


def test_shipped_configs_parse():
    for path in CONFIGS.glob("*.ini"):
        config_from_text(path.read_text(), base_dir=CONFIGS)


def test_config_grammar():
    cfg, spec = config_from_text("""
[scenario]
policy = dla
[road]
access_zones = 1000-1200, 3000-3300
[events]
inject = 50 id:3 ADS_FAILURE; 60 platooned odd_exit
[sweep]
strategies = dl, dla
mprs = 0.2, 0.8
[controller]
rejoin_threshold = 4
""")
    assert cfg.policy is LanePolicy.DLA
    assert cfg.road().access_zones == ((1000.0, 1200.0), (3000.0, 3300.0))
    assert [e.selector for e in cfg.injected_events] == ["id:3", "platooned"]
    assert spec.strategies == ("DL", "DLA") and spec.mprs == (0.2, 0.8)
    assert cfg.controller.rejoin_threshold == 4


@pytest.mark.parametrize("text", [
    "[nosuch]\na = 1\n",
    "[scenario]\ncolour = red\n",
    "[scenario]\npolicy = HOT\n",
    "[scenario]\ndt = fast\n",
    "[road]\naccess_zones = 300-200\n[scenario]\npolicy = DLA\n",
    "[sweep]\nmprs = 0.5, 2\n",
    "[dsrc]\ncoefficients = missing.txt\n",
])
def test_config_rejections(text):
    with pytest.raises(ConfigError):
        config_from_text(text)


def test_zones_only_apply_to_dla():
    cfg, _ = config_from_text("[road]\naccess_zones = 100-200\n")
    assert cfg.road().access_zones == ()
    assert cfg.cell("DLA", 0.4).road().access_zones == ((100.0, 200.0),)


def test_parsers():
    assert parse_zones("") == ()
    with pytest.raises(ConfigError):
        parse_zones("12")
    with pytest.raises(ConfigError):
        parse_events("10 platooned")
    with pytest.raises(ConfigError):
        parse_events("10 somebody ODD_EXIT")


def test_validate_coefficients(capsys):
    assert main(["validate-coefficients"]) == EXIT_OK
    out = capsys.readouterr().out
    rows = [r for r in data_rows(out) if r[0].isdigit()]
    assert len(rows) == 60
    assert f"sha256={DEFAULT_TABLE.checksum()}" in out
    assert out.count("PASS") == 3


def test_validate_catches_corruption(tmp_path, capsys):
    bad = DEFAULT_TABLE.replace((1, 0, 0), 5.0)
    path = tmp_path / "bad.txt"
    path.write_text(bad.to_text())
    assert main(["validate-coefficients", "--coefficients", str(path)]) == EXIT_VALIDATION
    assert "differs from built-in table at [(1, 0, 0)]" in capsys.readouterr().out


def test_run_smoke(tmp_path, capsys):
    cfg = tmp_path / "smoke.ini"
    cfg.write_text(SMOKE)
    out = tmp_path / "out"
    code = main(["run", "--config", str(cfg), "--output-dir", str(out), "--workers", "1",
                 "--fallback-log", "--reception-log"])
    assert code == EXIT_OK
    names = sorted(p.name for p in out.iterdir())
    assert "summary.csv" in names and "replications.csv" in names
    assert sum(n.endswith("_reception.csv") for n in names) == 2
    assert not any(n.startswith(".") for n in names)
    assert "DL" in capsys.readouterr().out


def test_output_dir_from_environment(tmp_path, monkeypatch):
    cfg = tmp_path / "smoke.ini"
    cfg.write_text(SMOKE.replace("replications = 2", "replications = 1"))
    monkeypatch.setenv("CACCSIM_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["run", "--config", str(cfg)]) == EXIT_OK
    assert (tmp_path / "env" / "summary.csv").exists()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "caccsim", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "validate-coefficients" in proc.stdout
