import pytest

from navslip.config import CHECKS, config_from_dict, parse_config
from navslip.errors import ParseError, ValidationError


def write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestDefaults:
    def test_minimal(self, tmp_path):
        cfg = parse_config(write(tmp_path, "[geometry]\nn_r = 16\n"))
        assert cfg.geometry.n_r == 16 and cfg.geometry.kind == "annulus"
        assert cfg.scenario.name == "solid_rotation"
        assert cfg.solver.nu == 0.0 and cfg.solver.scheme == "upwind"
        assert cfg.output.checks == ["max_principle", "lp_budget"]
        params = cfg.solver_params()
        assert params.R is None and params.dt is None

    def test_problem_kwargs(self):
        cfg = config_from_dict({"geometry": {"n_r": 8}, "scenario": {"name": "zero"}})
        kw = cfg.problem_kwargs()
        assert kw["scenario"] == "zero" and kw["n_s"] == 16

    def test_every_check_accepted(self):
        cfg = config_from_dict({"geometry": {}, "output": {"checks": list(CHECKS)}})
        assert cfg.output.checks == list(CHECKS)


class TestValidation:
    def test_theta_too_large(self, tmp_path):
        p = write(tmp_path, "[geometry]\n[solver]\ntheta = 0.5\nT = 1.0\n")
        with pytest.raises(ValidationError) as info:
            parse_config(p)
        assert "theta < T/4" in str(info.value)

    def test_theta_against_sigma0(self):
        with pytest.raises(ValidationError, match="theta < sigma0"):
            config_from_dict({"geometry": {"r_inner": 0.9}, "solver": {"theta": 0.1, "T": 4.0}})

    def test_collects_all_problems(self):
        with pytest.raises(ValidationError) as info:
            config_from_dict({"geometry": {"n_r": 2}, "solver": {"cfl": 2.0, "p": 1.0}})
        assert len(info.value.problems) == 3

    @pytest.mark.parametrize(
        "raw",
        [
            {"geometry": {"kind": "square"}},
            {"geometry": {}, "scenario": {"name": "nope"}},
            {"geometry": {}, "solver": {"nu": 1.5}},
            {"geometry": {}, "solver": {"method": "picard"}},
            {"geometry": {}, "sweep": {"nu_list": [1e-3, 1e-2]}},
            {"geometry": {}, "sweep": {"grid_list": [2]}},
            {"geometry": {}, "output": {"checks": ["bogus"]}},
        ],
    )
    def test_rejects(self, raw):
        with pytest.raises(ValidationError):
            config_from_dict(raw)

    def test_output_directory_is_file(self, tmp_path):
        f = write(tmp_path, "x", "occupied")
        with pytest.raises(ValidationError, match="not a directory"):
            config_from_dict({"geometry": {}, "output": {"directory": str(f)}})


class TestParsing:
    def test_missing_geometry(self, tmp_path):
        with pytest.raises(ParseError, match="geometry"):
            parse_config(write(tmp_path, "[solver]\nnu = 0.01\n"))

    def test_unknown_key_strict(self, tmp_path):
        with pytest.raises(ParseError, match="unknown key"):
            parse_config(write(tmp_path, "[geometry]\nradius = 2\n"))

    def test_unknown_key_lenient(self, tmp_path):
        p = write(tmp_path, "[geometry]\nradius = 2\n[output]\nstrict = false\n")
        with pytest.warns(UserWarning, match="unknown key"):
            cfg = parse_config(p)
        assert cfg.geometry.r_outer == 1.0

    def test_unknown_section(self, tmp_path):
        with pytest.raises(ParseError, match="unknown section"):
            parse_config(write(tmp_path, "[geometry]\n[extras]\n"))

    @pytest.mark.parametrize("line", ['n_r = "32"', "n_r = 3.5", "n_r = true"])
    def test_type_errors(self, tmp_path, line):
        with pytest.raises(ParseError, match="integer"):
            parse_config(write(tmp_path, f"[geometry]\n{line}\n"))

    def test_integer_accepted_for_float(self, tmp_path):
        cfg = parse_config(write(tmp_path, "[geometry]\n[solver]\nT = 2\n"))
        assert cfg.solver.T == 2.0 and isinstance(cfg.solver.T, float)

    def test_toml_syntax_error(self, tmp_path):
        with pytest.raises(ParseError, match="line 2"):
            parse_config(write(tmp_path, "[geometry]\nn_r = = 3\n"))

    def test_unreadable(self, tmp_path):
        with pytest.raises(ParseError, match="cannot read"):
            parse_config(tmp_path / "missing.toml")

    def test_relative_table_path(self, tmp_path):
        sub = tmp_path / "cfg"
        sub.mkdir()
        p = write(sub, '[geometry]\n[scenario]\nname = "custom_table"\nparams = { path = "data.csv" }\n')
        cfg = parse_config(p)
        assert cfg.scenario.params["path"] == str((sub / "data.csv").resolve())
