"""TOML job configuration: defaults, validation messages, round-tripping."""

import math

import pytest

from collage.config import (ElementSpec, FitConfig, JobConfig, OutputSpec,
                            config_from_dict, dump_config, load_config)
from collage.errors import ParseError, ValidationError


def write_cfg(tmp_path, top="", tables=""):
    (tmp_path / "el.svg").write_text("<svg/>")
    (tmp_path / "cont.svg").write_text("<svg/>")
    text = (f'container = "cont.svg"\n{top}\n'
            f'[[elements]]\npath = "el.svg"\n{tables}\n')
    p = tmp_path / "job.toml"
    p.write_text(text)
    return p


def test_minimal_config_gets_defaults(tmp_path):
    cfg = load_config(str(write_cfg(tmp_path)))
    assert cfg.seed == 0
    assert cfg.init == "mat"
    assert cfg.container == str(tmp_path / "cont.svg")
    assert cfg.elements[0].path == str(tmp_path / "el.svg")
    assert cfg.elements[0].count == 1
    assert cfg.total_elements == 1
    assert (cfg.weights.alpha, cfg.weights.beta,
            cfg.weights.gamma, cfg.weights.delta) == (3e3, 8e4, 5e-4, 0.0)
    assert cfg.schedule.levels == ((50, 67), (200, 67), (600, 66))
    assert cfg.optimizer.epochs == 200
    assert cfg.force is None
    assert cfg.fit == FitConfig()
    assert cfg.outputs == OutputSpec()
    assert cfg.base_dir == str(tmp_path)


def test_resolve_joins_relative_paths(tmp_path):
    cfg = load_config(str(write_cfg(tmp_path)))
    assert cfg.resolve("out/x.svg") == str(tmp_path / "out" / "x.svg")
    assert cfg.resolve("/abs/x.svg") == "/abs/x.svg"


def test_counts_multiply_elements(tmp_path):
    cfg = load_config(str(write_cfg(tmp_path, tables="count = 7")))
    assert cfg.total_elements == 7


# ---------------------------------------------------------------------------
# errors
# ---------------------------------------------------------------------------

def test_unknown_keys_fail_with_dotted_path(tmp_path):
    with pytest.raises(ValidationError, match=r"\.bogus"):
        load_config(str(write_cfg(tmp_path, top="bogus = 1")))
    with pytest.raises(ValidationError, match="render.foo"):
        load_config(str(write_cfg(tmp_path, tables="[render]\nfoo = 1")))
    with pytest.raises(ValidationError, match=r"elements\[0\].wat"):
        load_config(str(write_cfg(tmp_path, tables="wat = 2")))


def test_type_errors_name_expected_type(tmp_path):
    with pytest.raises(ValidationError, match="seed must be int, got str"):
        load_config(str(write_cfg(tmp_path, top='seed = "x"')))
    with pytest.raises(ValidationError, match="alpha must be float, got bool"):
        load_config(str(write_cfg(tmp_path, tables="[weights]\nalpha = true")))


def test_int_coerces_to_float_fields(tmp_path):
    cfg = load_config(str(write_cfg(tmp_path, tables="[weights]\nalpha = 3000")))
    assert cfg.weights.alpha == 3000.0
    assert isinstance(cfg.weights.alpha, float)


def test_missing_required_pieces(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text('seed = 1\n')
    with pytest.raises(ValidationError, match="container"):
        load_config(str(p))
    p.write_text('container = "canvas"\n')
    with pytest.raises(ValidationError, match="elements"):
        load_config(str(p))


def test_missing_files_are_reported(tmp_path):
    p = tmp_path / "job.toml"
    p.write_text('container = "nope.svg"\n[[elements]]\npath = "nope.svg"\n')
    with pytest.raises(ValidationError, match="container file not found"):
        load_config(str(p))
    (tmp_path / "nope.svg").write_text("<svg/>")
    p2 = tmp_path / "job2.toml"
    p2.write_text('container = "nope.svg"\n[[elements]]\npath = "gone.svg"\n')
    with pytest.raises(ValidationError, match="element file not found"):
        load_config(str(p2))


def test_canvas_container_needs_no_file(tmp_path):
    (tmp_path / "el.svg").write_text("<svg/>")
    p = tmp_path / "job.toml"
    p.write_text('container = "canvas"\n[[elements]]\npath = "el.svg"\n')
    assert load_config(str(p)).container == "canvas"


def test_toml_parse_errors(tmp_path):
    p = tmp_path / "broken.toml"
    p.write_text("container = [unclosed\n")
    with pytest.raises(ParseError):
        load_config(str(p))
    with pytest.raises(ParseError, match="cannot read config"):
        load_config(str(tmp_path / "absent.toml"))


def test_element_spec_validation():
    with pytest.raises(ValidationError, match="count"):
        ElementSpec(path="x", count=0)
    with pytest.raises(ValidationError, match="scale"):
        ElementSpec(path="x", scale=0.0)
    with pytest.raises(ValidationError, match="scale_mode"):
        ElementSpec(path="x", scale_mode="stuck")
    with pytest.raises(ValidationError, match="rotation_range"):
        ElementSpec(path="x", rotation_mode="range")
    with pytest.raises(ValidationError, match="rotation_range"):
        ElementSpec(path="x", rotation_range=(0.0, 1.0))
    with pytest.raises(ValidationError, match="lo"):
        ElementSpec(path="x", rotation_mode="range", rotation_range=(1.0, -1.0))


def test_rotation_range_must_be_pair(tmp_path):
    with pytest.raises(ValidationError, match="two-number array"):
        load_config(str(write_cfg(
            tmp_path, tables='rotation_mode = "range"\n'
                             'rotation_range = [1.0, 2.0, 3.0]')))


def test_elements_entry_must_be_table(tmp_path):
    (tmp_path / "cont.svg").write_text("<svg/>")
    p = tmp_path / "job.toml"
    p.write_text('container = "cont.svg"\nelements = [1, 2]\n')
    with pytest.raises(ValidationError, match=r"elements\[0\] must be a table"):
        load_config(str(p))


# ---------------------------------------------------------------------------
# schedule / epochs reconciliation
# ---------------------------------------------------------------------------

def test_schedule_only_sets_epochs(tmp_path):
    cfg = load_config(str(write_cfg(
        tmp_path, tables="[schedule]\nlevels = [[50, 10], [100, 5]]")))
    assert cfg.schedule.levels == ((50, 10), (100, 5))
    assert cfg.optimizer.epochs == 15


def test_epochs_only_builds_hierarchical_schedule(tmp_path):
    cfg = load_config(str(write_cfg(tmp_path, tables="[optimizer]\nepochs = 90")))
    assert cfg.schedule.levels == ((50, 30), (200, 30), (600, 30))
    assert cfg.optimizer.epochs == 90


def test_schedule_epochs_mismatch_rejected(tmp_path):
    with pytest.raises(ValidationError, match="schedule epochs"):
        load_config(str(write_cfg(
            tmp_path,
            tables="[optimizer]\nepochs = 99\n[schedule]\nlevels = [[50, 10]]")))


def test_schedule_matching_epochs_accepted(tmp_path):
    cfg = load_config(str(write_cfg(
        tmp_path,
        tables="[optimizer]\nepochs = 10\n[schedule]\nlevels = [[50, 10]]")))
    assert cfg.optimizer.epochs == 10


def test_malformed_schedule_level(tmp_path):
    with pytest.raises(ValidationError, match=r"schedule.levels\[0\]"):
        load_config(str(write_cfg(tmp_path, tables="[schedule]\nlevels = [[50]]")))


# ---------------------------------------------------------------------------
# force
# ---------------------------------------------------------------------------

def test_force_parsing(tmp_path):
    cfg = load_config(str(write_cfg(
        tmp_path, tables='[force]\nkind = "directional"\nvector = [0, -1]')))
    assert cfg.force.kind == "directional"
    assert cfg.force.vector == (0.0, -1.0)

    cfg = load_config(str(write_cfg(
        tmp_path, tables='[force]\nkind = "point"\npoint = [300, 300]\n'
                         'elements = [0]')))
    assert cfg.force.point == (300.0, 300.0)
    assert cfg.force.elements == (0,)


def test_force_requires_kind(tmp_path):
    with pytest.raises(ValidationError, match="force.kind"):
        load_config(str(write_cfg(tmp_path, tables="[force]\nvector = [0, 1]")))


# ---------------------------------------------------------------------------
# dump round-trip
# ---------------------------------------------------------------------------

def rich_config(tmp_path):
    (tmp_path / "a.svg").write_text("<svg/>")
    (tmp_path / "b.png").write_text("x")
    (tmp_path / "cont.svg").write_text("<svg/>")
    doc = {
        "container": "cont.svg",
        "seed": 42,
        "init": "random",
        "elements": [
            {"path": "a.svg", "count": 3, "display_color": "#a0b0c0",
             "rotation_mode": "range", "rotation_range": [-0.5, 0.25],
             "rotation": 0.1},
            {"path": "b.png", "scale": 2.5, "scale_mode": "fixed"},
        ],
        "weights": {"alpha": 1000.0, "gamma": 0.001},
        "uniform": {"kernel_sizes": [5, 11], "level_weights": [1.0, 2.0]},
        "render": {"kappa": 2.0, "padding": 16},
        "optimizer": {"epochs": 12, "lr_translate": 0.7, "grad_clip": 3.0,
                      "reset_moments_on_level_change": True},
        "schedule": {"levels": [[50, 6], [100, 6]]},
        "force": {"kind": "directional", "vector": [0.0, -1.0],
                  "elements": [0, 2]},
        "fit": {"n_segments": 8, "threshold": 0.05},
        "outputs": {"final_svg": "out/f.svg", "metrics_json": "m.json",
                    "frame_stride": 5, "checkpoint": "c.json"},
    }
    return config_from_dict(doc, base_dir=str(tmp_path))


def test_dump_load_round_trip(tmp_path):
    cfg = rich_config(tmp_path)
    dumped = tmp_path / "dumped.toml"
    dumped.write_text(dump_config(cfg))
    back = load_config(str(dumped))
    assert back == cfg


def test_dump_round_trip_minimal(tmp_path):
    cfg = load_config(str(write_cfg(tmp_path)))
    dumped = tmp_path / "dumped.toml"
    dumped.write_text(dump_config(cfg))
    assert load_config(str(dumped)) == cfg


def test_job_config_validates_epoch_consistency(tmp_path):
    cfg = rich_config(tmp_path)
    from dataclasses import replace
    from collage.optimize import OptimizerConfig
    with pytest.raises(ValidationError, match="schedule epochs"):
        replace(cfg, optimizer=OptimizerConfig(epochs=13))
