"""
Tests de carga, validación y persistencia de configuraciones.
"""
import copy
import json

import pytest

from core.config_loader import benchmark_path, load_config, parse_config, save_config
from core.errors import ConfigError, ConfigSchemaError, ExpressionSyntaxError
from core.expression_parser import to_source
from core.montecarlo import ACCEPTANCE_EM_DT, ACCEPTANCE_PATHS
from models.config_models import SUBCOMMANDS, NumericsConfig

MINIMAL = {
    "name": "mini",
    "field": {"d": 1, "T": 1, "Q": [["1"]], "b": ["-x1+cos(2*pi*t)"]},
    "numerics": {"R": 4, "h": 0.2, "dt": 0.05},
    "experiments": [{"kind": "validate"}],
}


def _raw(**changes):
    raw = copy.deepcopy(MINIMAL)
    for dotted, value in changes.items():
        target = raw
        keys = dotted.split("__")
        for key in keys[:-1]:
            target = target[key]
        target[keys[-1]] = value
    return raw


class TestBenchmarks:

    @pytest.mark.parametrize("name", ["ou", "cubic"])
    def test_benchmarks_load(self, name):
        cfg = load_config(benchmark_path(name))
        assert cfg.name == name
        assert cfg.field.d == 1
        assert cfg.lyapunov is not None
        assert {e.kind for e in cfg.experiments} <= set(SUBCOMMANDS)

    def test_ou_block_only_in_ou(self):
        assert load_config(benchmark_path("ou")).ou is not None
        assert load_config(benchmark_path("cubic")).ou is None

    def test_tail_lyapunov(self):
        L = load_config(benchmark_path("cubic")).lyapunov
        assert L.tail and L.R0 == 2
        assert (L.c, L.gamma) == (1.0, 2.0)

    def test_ou_mc_runs_at_acceptance_size(self):
        cfg = load_config(benchmark_path("ou"))
        mc = next(e for e in cfg.experiments if e.kind == "mc")
        assert int(mc.params["n"]) == ACCEPTANCE_PATHS == 1_000_000
        assert float(mc.params["em_dt"]) == ACCEPTANCE_EM_DT == 1e-3


class TestParseConfig:

    def test_defaults(self):
        cfg = parse_config(_raw())
        assert cfg.numerics.theta == 1.0
        assert cfg.numerics.drift_scheme == "hybrid"
        assert cfg.seed == 0
        assert cfg.output_dir.endswith("mini")
        assert cfg.experiments[0].name == "validate"

    def test_repeated_kinds_get_suffix(self):
        cfg = parse_config(_raw(experiments=[{"kind": "mc"}, {"kind": "mc"}]))
        assert [e.name for e in cfg.experiments] == ["mc", "mc_2"]

    def test_duplicate_names(self):
        raw = _raw(experiments=[{"kind": "mc", "name": "a"}, {"kind": "decay", "name": "a"}])
        with pytest.raises(ConfigError, match="repetidos"):
            parse_config(raw)

    def test_bad_drift_reports_location(self):
        with pytest.raises(ExpressionSyntaxError) as info:
            parse_config(_raw(field__b=["-x1 + log("]))
        assert "field/b/0" in str(info.value)
        assert info.value.offset == 10

    def test_bad_lyapunov_expression(self):
        raw = _raw(lyapunov={"W": "x1^^2"})
        with pytest.raises(ExpressionSyntaxError, match="lyapunov/W"):
            parse_config(raw)

    def test_dt_must_divide_period(self):
        with pytest.raises(ConfigError, match="no divide"):
            parse_config(_raw(numerics__dt=0.3))

    def test_radius_multiple_of_h(self):
        with pytest.raises(ConfigError, match="múltiplo"):
            parse_config(_raw(numerics__h=0.3))

    def test_ou_block_needs_one_dimension(self):
        raw = _raw(field={"d": 2, "T": 1, "Q": [["1", "0"], ["0", "1"]], "b": ["-x1", "-x2"]},
                   ou={"a": "-1", "f": "0", "q": "1"})
        with pytest.raises(ConfigError):
            parse_config(raw)

    @pytest.mark.parametrize("changes", [
        {"name": ""},
        {"numerics__theta": 0.7},
        {"numerics__drift_scheme": "central"},
        {"experiments": [{"kind": "plot"}]},
        {"seed": -1},
        {"extra": 1},
        {"field__d": 3},
    ])
    def test_schema_violations(self, changes):
        with pytest.raises(ConfigSchemaError):
            parse_config(_raw(**changes))

    def test_schema_error_is_config_error(self):
        with pytest.raises(ConfigError):
            parse_config({"name": "x"})


class TestFiles:

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="No existe"):
            load_config(str(tmp_path / "nada.json"))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "roto.json"
        path.write_text("{\"name\": ", encoding="utf-8")
        with pytest.raises(ConfigSchemaError, match="JSON inválido"):
            load_config(str(path))

    def test_save_and_reload(self, tmp_path):
        cfg = load_config(benchmark_path("ou"))
        target = tmp_path / "sub" / "ou.json"
        save_config(cfg, str(target))
        again = load_config(str(target))
        assert again.name == cfg.name
        assert [to_source(e) for e in again.field.b] == [to_source(e) for e in cfg.field.b]
        assert to_source(again.lyapunov.W) == to_source(cfg.lyapunov.W)
        assert [e.name for e in again.experiments] == [e.name for e in cfg.experiments]
        assert json.loads(target.read_text(encoding="utf-8"))["seed"] == cfg.seed


class TestConfigModels:

    def test_refined(self):
        n = NumericsConfig(R=4.0, h=0.2, dt=0.04).refined(1)
        assert n.h == pytest.approx(0.1)
        assert n.dt == pytest.approx(0.01)
        assert n.R == 4.0

    def test_experiments_for(self):
        cfg = parse_config(_raw(experiments=[{"kind": "validate"}, {"kind": "mc"}]))
        assert [e.kind for e in cfg.experiments_for("all")] == ["validate", "mc"]
        assert [e.name for e in cfg.experiments_for("mc")] == ["mc"]
        fallback = cfg.experiments_for("decay")
        assert len(fallback) == 1 and fallback[0].params == {}
