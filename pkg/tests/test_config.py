import dataclasses

import pytest

from hpmvs.config import (ABLATION_ROWS, RunConfig, dump_config,
                          parse_config, row_config)
from hpmvs.errors import FormatError


def test_defaults_build_stage_configs():
    cfg = RunConfig()
    prop = cfg.propagation()
    assert prop.k == 4 and prop.n_ext == 3 and prop.radius == 4.0
    assert prop.iterations == 3 and prop.seed == 0
    pri = cfg.prior()
    assert pri.tau_cred == 0.1 and pri.k == 6 and pri.eta == 0.2
    sched = cfg.schedule()
    assert sched.scale_factors == (4, 2, 1)
    assert sched.variant == "full"
    assert sched.gc_rounds == 2
    fus = cfg.fusion()
    assert fus.min_consistent == 2 and fus.max_reproj == 2.0


def test_toggles_reach_propagation_config():
    assert RunConfig(use_nonlocal=False).propagation().radius == 0.0
    assert RunConfig(use_extensible=False).propagation().n_ext == 0
    both = RunConfig(use_nonlocal=False, use_extensible=False).propagation()
    assert both.radius == 0.0 and both.n_ext == 0


def test_schedule_variant_selection():
    assert RunConfig(hpm_full=True, hpm_fast=False).schedule().variant == "full"
    fast = RunConfig(hpm_full=False, hpm_fast=True).schedule()
    assert fast.variant == "fast"
    assert fast.scale_factors == (4, 2, 1)
    flat = RunConfig(hpm_full=False, hpm_fast=False).schedule()
    assert flat.scale_factors == (1,)
    assert flat.variant == "full"


def test_variant_flags_are_exclusive():
    with pytest.raises(ValueError):
        RunConfig(hpm_full=True, hpm_fast=True)


def test_bad_scales_rejected_at_construction():
    with pytest.raises(ValueError):
        RunConfig(scales=(4, 2))
    with pytest.raises(ValueError):
        RunConfig(scales=(2, 4, 1))


def test_dump_parse_round_trip_is_byte_identical():
    for cfg in (RunConfig(),
                RunConfig(tau_good=0.30000000000000004, sigma_d=1e-09,
                          scales=(8, 4, 2, 1), seed=123, hpm_full=False,
                          hpm_fast=True, use_nonlocal=False, workers=5)):
        text = dump_config(cfg)
        again = parse_config(text)
        assert again == cfg
        assert dump_config(again) == text


def test_parse_normalizes_layout():
    messy = ("# comment line\n"
             "  seed = 9 \n"
             "\n"
             "tau_good=0.5\n")
    cfg = parse_config(messy)
    assert cfg.seed == 9 and cfg.tau_good == 0.5
    assert dump_config(cfg) == dump_config(RunConfig(seed=9, tau_good=0.5))


def test_parse_bool_spellings():
    for word, value in (("true", True), ("Yes", True), ("1", True),
                        ("on", True), ("false", False), ("no", False),
                        ("0", False), ("OFF", False)):
        assert parse_config(f"use_prior={word}\n").use_prior is value


def test_parse_rejects_unknown_key_with_line_number():
    with pytest.raises(FormatError) as err:
        parse_config("seed=1\nwat=2\n")
    assert err.value.line == 2
    assert "wat" in str(err.value)


def test_parse_rejects_duplicates_bad_values_and_missing_equals():
    with pytest.raises(FormatError):
        parse_config("seed=1\nseed=2\n")
    with pytest.raises(FormatError):
        parse_config("seed=banana\n")
    with pytest.raises(FormatError):
        parse_config("use_prior=perhaps\n")
    with pytest.raises(FormatError):
        parse_config("just a line\n")


def test_parse_rejects_inconsistent_config():
    with pytest.raises(FormatError):
        parse_config("hpm_full=true\nhpm_fast=true\n")


def test_parse_from_path(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(dump_config(RunConfig(seed=42)))
    assert parse_config(path).seed == 42


def test_ablation_rows_build_expected_pipelines():
    base = RunConfig()
    nesp = row_config(base, "NESP")
    assert not nesp.use_prior and nesp.use_nonlocal and nesp.use_extensible
    pa = row_config(base, "NESP+PA")
    assert pa.use_prior and pa.schedule().scale_factors == (1,)
    hpm = row_config(base, "HPM")
    assert not hpm.use_nonlocal and not hpm.use_extensible
    assert hpm.schedule().variant == "full"
    assert row_config(base, "HPM_fast").schedule().variant == "fast"
    full = row_config(base, "HPM-MVS")
    assert full.use_nonlocal and full.use_prior
    assert full.schedule().variant == "full"
    fastest = row_config(base, "HPM-MVS_fast")
    assert fastest.use_nonlocal and fastest.schedule().variant == "fast"
    with pytest.raises(KeyError):
        row_config(base, "unheard-of")
    assert set(ABLATION_ROWS) == {"NESP", "NESP+PA", "HPM", "HPM_fast",
                                  "HPM-MVS", "HPM-MVS_fast"}


def test_row_overrides_replace_base_choices():
    base = RunConfig(use_nonlocal=False, use_prior=False)
    row = row_config(base, "HPM-MVS")
    assert row.use_nonlocal and row.use_prior
    assert row.seed == base.seed


def test_fields_cover_every_stage():
    names = {f.name for f in dataclasses.fields(RunConfig)}
    for expected in ("k", "n_ext", "tau_good", "tau_bad", "alpha", "n_good",
                     "n_bad", "radius", "iterations", "patch_radius", "seed",
                     "tau_cred", "prior_k", "eta", "gamma", "sigma_d",
                     "sigma_n", "scales", "gc_rounds", "lambda_geom", "psi",
                     "min_consistent", "max_reproj", "max_rel_depth_diff",
                     "max_normal_angle", "use_nonlocal", "use_extensible",
                     "use_prior", "hpm_full", "hpm_fast", "workers"):
        assert expected in names
