import pytest

from geosim.config import ConfigError, load_config
from geosim.engine import run


def test_minimal_nib_defaults():
    rc = load_config(text='nib.n = 16\nnib.country = "IND"\n')
    assert rc.nib.n == 16
    assert rc.nib.bandwidth == 100e6 and rc.nib.propagation == 0.020 and rc.nib.dvf == 0.1e-3
    assert rc.nib.arrival_rate == 478.0


def test_gib_preset_link():
    rc = load_config(preset="gib", text="gib.rate_tps = 10\n")
    assert rc.gib.bandwidth == 50e6 and rc.gib.propagation == 0.120


def test_unknown_key_is_error_with_line():
    with pytest.raises(ConfigError) as err:
        load_config(text='nib.n = 4\nnib.bogus = 1\n')
    assert err.value.line == 2 and err.value.key == "nib.bogus"


@pytest.mark.parametrize("text", ['nib.n = "four"', "nib.strategy = 'ring'", "sweep.n = []", "run.seed = -1",
                                  "nib.b_max_mib = 1\nnib.b_max_bytes = 5000", "nib.n = [", "nib.b_max_bytes = 100"])
def test_schema_violations(text):
    with pytest.raises(ConfigError):
        load_config(text=text)


def test_sweep_cap():
    with pytest.raises(ConfigError):
        load_config(text="sweep.n = [4, 8, 16]\nsweep.b_max_mib = [1, 2]\nsweep.max_points = 5\n")
    rc = load_config(text="sweep.n = [4, 32, 128]\nsweep.b_max_mib = [1, 4]\n")
    assert rc.sweep.size == 6


def test_presets_load():
    f8 = load_config(preset="fig8")
    assert f8.nib.arrival_rate == 478.0 and f8.sweep.layer == "NIB"
    assert dict(f8.sweep.axes)["n"] == (4, 8, 16, 32, 64, 128)
    f9 = load_config(preset="fig9")
    assert f9.role == "GEOS" and f9.gib.propagation == 0.120 and f9.countries == "all"
    with pytest.raises(ConfigError):
        load_config(preset="nope")


def test_echo_reloads_to_same_results():
    rc = load_config(preset="fig8", text="nib.n = 32\nnib.jitter = 0.1\nrun.duration_s = 60\n")
    again = load_config(text=rc.echo())
    assert again.nib.arrival_rate == rc.nib.arrival_rate
    assert again.gib.transaction_size == rc.gib.transaction_size
    assert run(again.nib).to_csv() == run(rc.nib).to_csv()


BASE = {"nib.n": "8", "nib.country": '"IND"', "run.duration_s": "20", "run.seed": "3", "nib.strategy": '"tree"'}
PERTURB = [
    ("nib.n", "16", {}),
    ("nib.b_max_mib", "0.01", {}),
    ("nib.header_size", "2048", {}),
    ("nib.tx_size", "900", {}),
    ("nib.dvf_ms", "0.3", {}),
    ("nib.bandwidth_mbps", "50", {}),
    ("nib.propagation_ms", "30", {}),
    ("nib.strategy", '"direct"', {}),
    ("nib.beta", "3", {}),
    ("nib.rate_tps", "100", {}),
    ("nib.country", '"CHN"', {}),
    ("nib.gamma", "3", {}),
    ("nib.crashed", "[2]", {}),
    ("nib.sign_ms", "1.0", {}),
    ("nib.aggregate_ms", "0.1", {}),
    ("nib.qc_verify_ms", "5", {}),
    ("nib.timeout_factor", "1.01", {"nib.jitter": "0.5"}),
    ("nib.jitter", "0.1", {}),
    ("nib.empty_blocks", "true", {"nib.rate_tps": "1"}),
    ("nib.report_base_size", "4096", {}),
    ("gib.dvf_report_ms", "5", {"run.role": '"GIB"', "gib.rate_tps": "30"}),
    ("run.seed", "4", {}),
    ("run.duration_s", "21", {}),
    ("run.warmup_fraction", "0.2", {}),
]


def _outputs(flat):
    rc = load_config(text="".join(f"{k} = {v}\n" for k, v in flat.items()))
    cfg = rc.gib if rc.role == "GIB" else rc.nib
    return rc.echo(), run(cfg).to_csv()


@pytest.mark.parametrize("key,value,extra", PERTURB, ids=[p[0] for p in PERTURB])
def test_every_result_parameter_is_echoed(key, value, extra):
    base = {**BASE, **extra}
    echo0, out0 = _outputs(base)
    echo1, out1 = _outputs({**base, key: value})
    assert out0 != out1, "perturbation does not affect results"
    assert echo0 != echo1, "parameter missing from the resolved echo"
