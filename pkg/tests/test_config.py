import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermodamage.config import (
    ConfigError,
    RunConfig,
    load_config,
    parse_config,
    scalar_preset,
    source_preset,
    vector_preset,
)

MINIMAL = "[time]\nT = 1\ntau = 0.125\n"


def test_minimal_config_parses():
    cfg = parse_config(MINIMAL)
    assert cfg.time.tau == 0.125
    assert cfg.material.kappa == 2.0
    assert cfg.mesh.dim == 1


def test_empty_config_uses_defaults():
    assert parse_config("") == RunConfig()


def test_negative_heat_source_rejected():
    with pytest.raises(ConfigError) as exc:
        parse_config(MINIMAL + "[sources]\ng = constant -1\n")
    assert any("heat source g must be nonnegative" in v for v in exc.value.violations)


def test_negative_boundary_flux_rejected():
    with pytest.raises(ConfigError) as exc:
        parse_config(MINIMAL + "[sources]\nh = product -1 3\n")
    assert any("boundary flux h" in v for v in exc.value.violations)


def test_small_kappa_rejected_with_condition_name():
    with pytest.raises(ConfigError) as exc:
        parse_config(MINIMAL + "[material]\nkappa = 0.5\n")
    assert any("conductivity growth: kappa > 1" in v for v in exc.value.violations)


def test_all_violations_reported():
    text = MINIMAL + "[material]\nkappa = 0.5\nc2 = 0\n[sources]\ng = constant -1\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    joined = "\n".join(exc.value.violations)
    assert "kappa > 1" in joined and "c2 > 0" in joined and "heat source" in joined


@pytest.mark.parametrize(
    "extra, fragment",
    [
        ("[initial]\ntheta0 = constant 0.05\n", "theta0 >= theta_star"),
        ("[initial]\nchi0 = constant 1.5\n", "chi0 in [0, 1]"),
        ("[initial]\nchi0 = constant -0.5\n", "chi0 >= 0"),
        ("[material]\ngradient_mode = laplacian\nmu_flag = 0\n", "mu_flag = 1"),
        ("[potential]\nbeta_kind = none\n", "irreversibility constraint"),
        ("[bogus]\nx = 1\n", "unknown section"),
        ("[material]\nfoo = 1\n", "unknown key"),
        ("[material]\nkappa = abc\n", "cannot parse"),
        ("[mesh]\nextents = 0\n", "extents"),
        ("[modes]\ntol_fp = 1\n", "other options section"),
        ("[initial]\ntheta0 = wobble 1\n", "unknown field preset"),
    ],
)
def test_violations(extra, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_config(MINIMAL + extra)
    assert any(fragment in v for v in exc.value.violations), exc.value.violations


def test_time_must_be_multiple_of_step():
    with pytest.raises(ConfigError):
        parse_config("[time]\nT = 1\ntau = 0.3\n")


def test_syntax_error():
    with pytest.raises(ConfigError):
        parse_config("no section header\n")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")


def test_shipped_configs_parse(config_dir):
    for path in sorted(config_dir.glob("*.ini")):
        load_config(path)


def test_two_dimensional_mesh_spec():
    cfg = parse_config("[mesh]\nextents = 0 1; 0 2\nresolution = 4\n[material]\np_exponent = 3\n" + MINIMAL)
    assert cfg.mesh.resolution == (4, 4)
    assert cfg.mesh.build().n_nodes == 16


def test_round_trip_of_shipped_config(damage_config):
    assert parse_config(damage_config.to_text()) == damage_config


@settings(max_examples=40, deadline=None)
@given(
    kappa=st.floats(1.01, 4.0),
    rho=st.floats(-2.0, 2.0),
    c2=st.floats(0.01, 1.0),
    delta=st.floats(0.0, 1.0),
    tau_pow=st.integers(2, 8),
    nu=st.floats(0.0, 1.0),
    M0=st.one_of(st.none(), st.floats(0.5, 100.0)),
    max_outer=st.integers(1, 200),
)
def test_round_trip_is_lossless(kappa, rho, c2, delta, tau_pow, nu, M0, max_outer):
    cfg = RunConfig()
    cfg = cfg.with_material(kappa=kappa, rho=rho, c2=c2, delta=delta, p_exponent=3.0)
    cfg = cfg.with_options(nu=nu, M0=M0, max_outer=max_outer).with_tau(2.0**-tau_pow)
    cfg = dataclasses.replace(cfg, initial=dataclasses.replace(cfg.initial, theta0="cosine 0.5 0.2"))
    assert parse_config(cfg.to_text()) == cfg


def test_field_presets():
    x = np.linspace(0.0, 2.0, 5)[:, None]
    ext = ((0.0, 2.0),)
    assert np.allclose(scalar_preset("constant 3", x, ext), 3.0)
    s = scalar_preset("sine 0.3", x, ext)
    assert s[0] == pytest.approx(0.0) and s[-1] == pytest.approx(0.0, abs=1e-15) and s[2] == pytest.approx(0.3)
    c = scalar_preset("cosine 0.5 0.1", x, ext)
    assert c[0] == pytest.approx(0.6) and c[-1] == pytest.approx(0.4)
    assert np.allclose(scalar_preset("linear 1 2", x, ext), 1.0 + x[:, 0])
    g = scalar_preset("gaussian 2 0.5 0.1", x, ext)
    assert g[2] == pytest.approx(2.0)
    assert vector_preset("sine 1", x, ext).shape == (5, 1)
    with pytest.raises(ValueError):
        scalar_preset("cosine 1", x, ext)
    with pytest.raises(ValueError):
        scalar_preset("constant x", x, ext)


def test_source_presets():
    x = np.linspace(0.0, 1.0, 3)[:, None]
    ext = ((0.0, 1.0),)
    ramp = source_preset("ramp 2 0.5", x, ext)
    assert np.allclose(ramp(0.25), 1.0) and np.allclose(ramp(1.0), 2.0)
    prod = source_preset("product 1 3.14159", x, ext)
    assert prod(0.0)[1] == pytest.approx(1.0)
    assert source_preset("gaussian 1 0.5 0.2", x, ext, vector=True)(0.3).shape == (3, 1)
    assert np.all(source_preset("zero", x, ext)(0.7) == 0.0)
    with pytest.raises(ValueError):
        source_preset("wave 1", x, ext)
