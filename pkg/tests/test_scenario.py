"""Scenario file parsing and validation diagnostics."""

import pytest

from domino.scenario import ScenarioError, load_scenario, parse_scenario
from domino.simnet import run_scenario
from domino.wire import NodeId

VALID = """
duration = 4.0
seed = 7
timestamp_jitter_ns = 0
hearability = [
  ["aa0000000001", "bb0000000001"],
  ["aa0000000001", "bb0000000002"],
]

[engine_defaults]
t_fup = 1.0

[[aps]]
id = "aa0000000001"
beacon_period = 0.1024

[[stas]]
id = "bb0000000001"
kind = "ffts"
gc_capable = true
gc_error_ns = 100
freq_error_ppm = 0.0
quality = { priority1 = 0 }

[[stas]]
id = "bb0000000002"
kind = "rfts"
freq_error_ppm = 10.0
engine = { t_fup = 1.5 }

[association]
"bb0000000001" = "aa0000000001"
"bb0000000002" = "aa0000000001"

[loss]
wireless_loss_prob = 0.1
"""


def write(tmp_path, text):
    path = tmp_path / "scn.toml"
    path.write_text(text)
    return path


def test_valid_scenario_loads(tmp_path):
    scn = load_scenario(write(tmp_path, VALID))
    assert scn.duration == 4_000_000_000
    assert scn.seed == 7
    assert len(scn.topology.aps) == 1
    assert len(scn.topology.stas) == 2
    gm = scn.topology.stas[NodeId.from_hex("bb0000000001")]
    assert gm.role.gc_capable and gm.gc_error_ns == 100
    assert gm.engine.t_fup == 1_000_000_000  # engine_defaults applied
    sc = scn.topology.stas[NodeId.from_hex("bb0000000002")]
    assert sc.engine.t_fup == 1_500_000_000  # per-station override wins
    assert scn.loss.wireless_loss_prob == 0.1


def test_loaded_scenario_runs(tmp_path):
    scn = load_scenario(write(tmp_path, VALID))
    trace = run_scenario(scn)
    assert any(rec.kind == "fup_rx" for rec in trace.records)


def test_missing_duration_names_the_key(tmp_path):
    with pytest.raises(ScenarioError) as exc:
        load_scenario(write(tmp_path, VALID.replace("duration = 4.0\n", "")))
    assert "duration" in str(exc.value)


def test_unknown_top_level_key(tmp_path):
    with pytest.raises(ScenarioError) as exc:
        load_scenario(write(tmp_path, "bogus = 1\n" + VALID))
    assert "bogus" in str(exc.value)


def test_unknown_sta_key():
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(
            {
                "duration": 2.0,
                "seed": 1,
                "stas": [{"id": "bb0000000001", "typo": 1}],
            }
        )
    assert "typo" in str(exc.value)


def test_bad_node_id_diagnostic():
    with pytest.raises(ScenarioError) as exc:
        parse_scenario({"duration": 2.0, "seed": 1, "aps": [{"id": "xyz"}]})
    assert "aps[0].id" in str(exc.value)


def test_association_outside_hearability_rejected(tmp_path):
    broken = VALID.replace('  ["aa0000000001", "bb0000000002"],\n', "")
    with pytest.raises(ScenarioError) as exc:
        load_scenario(write(tmp_path, broken))
    assert "hearability" in str(exc.value)


def test_rfts_with_quality_rejected():
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(
            {
                "duration": 2.0,
                "seed": 1,
                "stas": [
                    {"id": "bb0000000001", "kind": "rfts", "quality": {"priority1": 1}}
                ],
            }
        )
    assert "quality" in str(exc.value)


def test_gc_error_requires_gc_capable():
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(
            {
                "duration": 2.0,
                "seed": 1,
                "stas": [{"id": "bb0000000001", "kind": "ffts", "gc_error_ns": 5}],
            }
        )
    assert "gc_error_ns" in str(exc.value)


def test_toml_syntax_error_is_scenario_error(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario(write(tmp_path, "duration = ["))


def test_missing_file_is_scenario_error(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "absent.toml")


def test_hearability_with_delay(tmp_path):
    text = VALID.replace(
        '["aa0000000001", "bb0000000002"],',
        '["aa0000000001", "bb0000000002", 0.000001],',
    )
    scn = load_scenario(write(tmp_path, text))
    key = (NodeId.from_hex("aa0000000001"), NodeId.from_hex("bb0000000002"))
    assert scn.topology.prop_delay[key] == 1000


def test_duplicate_sta_id_rejected():
    sta = {"id": "bb0000000001", "kind": "rfts"}
    with pytest.raises(ScenarioError) as exc:
        parse_scenario({"duration": 2.0, "seed": 1, "stas": [sta, dict(sta)]})
    assert "duplicate" in str(exc.value)
