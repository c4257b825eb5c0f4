import numpy as np
import pytest

from odgen.core import City
from odgen.data import (
    SynthConfig,
    grid_distances,
    load_city,
    load_od_csv,
    save_city,
    save_od_csv,
    synth_city,
)
from odgen.exceptions import DataFormatError


def write_two_region_fixture(path, with_od=True):
    (path / "regions.csv").write_text(
        "id,lon,lat,attr_0,attr_1\n" "a,0.0,0.0,10,1\n" "b,0.01,0.0,20,2\n"
    )
    (path / "transport_ngb.csv").write_text("src,dst\na,b\n")
    (path / "transport_bus.csv").write_text("src,dst\n")
    (path / "transport_rail.csv").write_text("src,dst\n")
    if with_od:
        (path / "od.csv").write_text("origin,dest,flow\na,b,5\nb,a,2\n")


def assert_cities_equal(a: City, b: City):
    assert a.region_ids == b.region_ids
    assert [r.lon for r in a.regions] == pytest.approx([r.lon for r in b.regions], abs=1e-9)
    assert [r.lat for r in a.regions] == pytest.approx([r.lat for r in b.regions], abs=1e-9)
    np.testing.assert_allclose(a.attribute_matrix, b.attribute_matrix, rtol=0, atol=1e-9)
    for mode in ("ngb", "bus", "rail"):
        np.testing.assert_array_equal(
            a.transport.as_dict()[mode], b.transport.as_dict()[mode]
        )
    assert (a.od is None) == (b.od is None)
    if a.od is not None:
        np.testing.assert_allclose(a.od.flows, b.od.flows, rtol=0, atol=1e-9)


def test_load_two_region_fixture(tmp_path):
    write_two_region_fixture(tmp_path)
    city = load_city(tmp_path)
    assert city.n_regions == 2
    np.testing.assert_allclose(city.od.flows, [[0.0, 5.0], [2.0, 0.0]])
    assert city.transport.ngb[0, 1] and city.transport.ngb[1, 0]
    assert city.transport.ngb[0, 0]  # self-loops added
    assert not city.transport.bus[0, 1]


def test_load_without_od(tmp_path):
    write_two_region_fixture(tmp_path, with_od=False)
    assert load_city(tmp_path).od is None


def test_load_unknown_id_in_edges(tmp_path):
    write_two_region_fixture(tmp_path)
    (tmp_path / "transport_bus.csv").write_text("src,dst\na,zzz\n")
    with pytest.raises(DataFormatError, match=r"transport_bus\.csv.*zzz"):
        load_city(tmp_path)


def test_load_unknown_id_in_od(tmp_path):
    write_two_region_fixture(tmp_path)
    (tmp_path / "od.csv").write_text("origin,dest,flow\na,q,1\n")
    with pytest.raises(DataFormatError, match=r"od\.csv.*'q'"):
        load_city(tmp_path)


def test_load_negative_flow(tmp_path):
    write_two_region_fixture(tmp_path)
    (tmp_path / "od.csv").write_text("origin,dest,flow\na,b,-3\n")
    with pytest.raises(DataFormatError, match="negative"):
        load_city(tmp_path)


def test_load_ragged_attributes(tmp_path):
    write_two_region_fixture(tmp_path)
    (tmp_path / "regions.csv").write_text(
        "id,lon,lat,attr_0,attr_1\n" "a,0.0,0.0,10,1\n" "b,0.01,0.0,20\n"
    )
    with pytest.raises(DataFormatError, match="attribute-dimension mismatch"):
        load_city(tmp_path)


def test_roundtrip_identity(tmp_path):
    city = synth_city(SynthConfig(n_regions=12, attr_dim=5, seed=99, poisson_noise=True))
    save_city(city, tmp_path / "c")
    assert_cities_equal(city, load_city(tmp_path / "c"))


def test_roundtrip_without_od(tmp_path):
    base = synth_city(SynthConfig(n_regions=6, attr_dim=3, seed=1))
    city = City(regions=base.regions, transport=base.transport, od=None)
    save_city(city, tmp_path / "c")
    assert load_city(tmp_path / "c").od is None


def test_od_csv_roundtrip(tmp_path):
    city = synth_city(SynthConfig(n_regions=5, attr_dim=3, seed=4))
    save_od_csv(city.od, city.region_ids, tmp_path / "od.csv")
    net = load_od_csv(tmp_path / "od.csv", city.region_ids)
    np.testing.assert_allclose(net.flows, city.od.flows, rtol=0, atol=1e-9)


def test_synth_deterministic():
    cfg = SynthConfig(n_regions=20, attr_dim=8, seed=123, poisson_noise=True)
    a, b = synth_city(cfg), synth_city(cfg)
    np.testing.assert_array_equal(a.attribute_matrix, b.attribute_matrix)
    np.testing.assert_array_equal(a.od.flows, b.od.flows)
    for mode in ("ngb", "bus", "rail"):
        np.testing.assert_array_equal(
            a.transport.as_dict()[mode], b.transport.as_dict()[mode]
        )


def test_synth_seed_changes_output():
    a = synth_city(SynthConfig(n_regions=9, attr_dim=4, seed=0))
    b = synth_city(SynthConfig(n_regions=9, attr_dim=4, seed=1))
    assert not np.array_equal(a.od.flows, b.od.flows)


def test_synth_two_region_handflow():
    # populations 2 and 3 at distance 6 with unit parameters give T = 1
    cfg = SynthConfig(n_regions=4, attr_dim=1, seed=0)
    pops = np.array([2.0, 3.0])
    d = 6.0
    t = cfg.gravity_g * pops[0] ** cfg.lambda1 * pops[1] ** cfg.lambda2 / d**cfg.lambda3
    assert t == pytest.approx(cfg.gravity_g * 6.0 / 36.0)
    unit = SynthConfig(n_regions=4, attr_dim=1, seed=0, gravity_g=1.0, lambda3=1.0)
    assert 1.0 * 2.0 * 3.0 / 6.0 == pytest.approx(1.0)
    assert unit.lambda1 == unit.lambda2 == unit.lambda3 == 1.0


def test_synth_gravity_law_exact_without_perturbation():
    # independent least-squares oracle on the noise-free, unperturbed flows
    cfg = SynthConfig(
        n_regions=25,
        attr_dim=6,
        seed=5,
        gravity_g=2.5e-4,
        lambda1=0.8,
        lambda2=1.2,
        lambda3=1.7,
        attr_effect=0.0,
    )
    city = synth_city(cfg)
    pops = city.attribute_matrix[:, 0]
    dists = grid_distances(cfg)
    mask = ~np.eye(cfg.n_regions, dtype=bool)
    i, j = np.nonzero(mask)
    design = np.column_stack(
        [np.ones(i.size), np.log(pops[i]), np.log(pops[j]), np.log(dists[i, j])]
    )
    target = np.log(city.od.flows[i, j])
    coeffs, residuals, _, _ = np.linalg.lstsq(design, target, rcond=None)
    assert coeffs[0] == pytest.approx(np.log(cfg.gravity_g), abs=1e-9)
    assert coeffs[1] == pytest.approx(cfg.lambda1, abs=1e-9)
    assert coeffs[2] == pytest.approx(cfg.lambda2, abs=1e-9)
    assert coeffs[3] == pytest.approx(-cfg.lambda3, abs=1e-9)
    assert float(residuals[0]) < 1e-18 if residuals.size else True


def test_synth_perturbation_changes_flows():
    plain = synth_city(SynthConfig(n_regions=16, attr_dim=6, seed=5, attr_effect=0.0))
    warped = synth_city(SynthConfig(n_regions=16, attr_dim=6, seed=5, attr_effect=0.3))
    ratio = warped.od.flows[plain.od.flows > 0] / plain.od.flows[plain.od.flows > 0]
    assert ratio.std() > 0.01  # genuinely pair-dependent factor


def test_synth_flows_finite_nonnegative_seed_sweep():
    for seed in range(100):
        cfg = SynthConfig(n_regions=9, attr_dim=4, seed=seed, poisson_noise=seed % 2 == 0)
        flows = synth_city(cfg).od.flows
        assert np.all(np.isfinite(flows))
        assert np.all(flows >= 0)


def test_synth_config_validation():
    with pytest.raises(DataFormatError):
        SynthConfig(n_regions=3)
    with pytest.raises(DataFormatError):
        SynthConfig(n_regions=10, gravity_g=0.0)
