import math

import numpy as np
import pydantic
import pytest

from pulsemech import io as pio
from pulsemech.config import Scenario, bundled_scenarios, load_scenario, resolve_config
from pulsemech.rng import block_sizes, stream
from pulsemech.tomography import MarginalSet, inverse_radon, symmetrize


def test_every_bundled_scenario_validates():
    found = bundled_scenarios()
    assert {"thermal_tomography", "double_prep", "noise_scan", "meff_cantilever",
            "piezo_calibration"} <= set(found)
    for path in found.values():
        load_scenario(path)


def test_seed_is_mandatory_and_unknown_fields_rejected():
    with pytest.raises(pydantic.ValidationError):
        Scenario.model_validate({"name": "x"})
    with pytest.raises(pydantic.ValidationError) as exc:
        Scenario.model_validate({"seed": 1, "pulse": {"N_signal": 1e7, "colour": "red"}})
    assert exc.value.errors()[0]["loc"] == ("pulse", "colour")
    with pytest.raises(pydantic.ValidationError):
        Scenario.model_validate({"seed": 1, "meff": {"beam_diameter_m": 1e-5}})
    with pytest.raises(pydantic.ValidationError):
        Scenario.model_validate({"seed": 1, "noise": {"electronic_variance": 1.0, "electronic_db_below": 19.5}})


def test_protocol_spec_from_scenario():
    sc = Scenario.model_validate({"seed": 3, "protocol": {"prep_pulses": 2, "repetitions": 10}})
    spec = sc.protocol_spec(45.0)
    assert len(spec.pulses) == 3
    assert spec.angles == [0.0, pytest.approx(math.pi / 2), pytest.approx(math.pi / 4)]
    with pytest.raises(ValueError):
        Scenario.model_validate({"seed": 3}).protocol_spec()


def test_resolve_config(tmp_path):
    assert resolve_config("noise_scan").name == "noise_scan.yaml"
    p = tmp_path / "s.yaml"
    p.write_text("seed: 1\n")
    assert resolve_config(str(p)) == p
    with pytest.raises(FileNotFoundError):
        resolve_config("no_such_scenario")


def test_streams_are_independent_and_reproducible():
    a = stream(1, 2).standard_normal(5)
    np.testing.assert_array_equal(a, stream(1, 2).standard_normal(5))
    assert not np.array_equal(a, stream(1, 3).standard_normal(5))
    assert block_sizes(10, 4) == [4, 4, 2]


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_table_round_trip(tmp_path, fmt):
    cols = {"a": np.array([1.0, 0.1 + 0.2, math.pi]), "b": np.array([1, 2, 3])}
    meta = {"seed": 1, "note": "x"}
    path = pio.write_table(tmp_path / "t", cols, meta, fmt)
    m, back = pio.read_table(path)
    assert m == meta
    np.testing.assert_array_equal(back["a"], cols["a"])
    np.testing.assert_array_equal(back["b"], cols["b"])
    with pytest.raises(ValueError):
        pio.write_table(tmp_path / "u", {"a": np.ones(2), "b": np.ones(3)}, meta)


def test_marginals_and_map_round_trip(tmp_path):
    gen = stream(4)
    angles = np.deg2rad(np.arange(5, 90, 10))
    ms = MarginalSet.from_samples(angles, [gen.normal(size=500) for _ in angles], bins=12,
                                  scale=2.0, chi_used=0.5)
    pio.write_marginals(tmp_path / "m.json", ms, {"seed": 4})
    meta, back = pio.read_marginals(tmp_path / "m.json")
    assert meta == {"seed": 4} and back.scale == 2.0 and back.chi_used == 0.5
    np.testing.assert_array_equal(back.histograms[3].counts, ms.histograms[3].counts)
    wmap = inverse_radon(symmetrize(back), 32)
    pio.write_map(tmp_path / "w.txt", wmap, {"seed": 4})
    header, w2 = pio.read_map(tmp_path / "w.txt")
    np.testing.assert_array_equal(w2.grid, wmap.grid)
    assert header["meta"] == {"seed": 4}
    with pytest.raises(ValueError):
        pio.read_map(tmp_path / "m.json")
