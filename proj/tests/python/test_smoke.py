import math

import numpy as np
import pytest

import odonto


def test_regular_tet_quality():
    s = 1 / math.sqrt(2)
    tet = np.array([[0, 0, 0], [s, 0, s], [s, s, 0], [0, s, s]])
    for name in ("volume_edge_ratio", "radius_ratio", "mean_ratio"):
        assert odonto.tet_quality(tet, name) == pytest.approx(1.0, abs=1e-12)
    assert odonto.tet_quality(tet, "radius_edge_ratio") == pytest.approx(math.sqrt(3 / 8), abs=1e-12)
    assert sorted(odonto.metric_names()) == ["mean_ratio", "radius_edge_ratio", "radius_ratio", "volume_edge_ratio"]
    with pytest.raises(odonto.InvalidInput):
        odonto.tet_quality(tet, "aspect")


def test_fits():
    loads = [0.3 + 0.1 * i for i in range(8)]
    f = odonto.fit_sqrt(loads, [0.2 * math.sqrt(l) + 0.01 for l in loads])
    assert f["alpha"] == pytest.approx(0.2, abs=1e-12)
    assert f["beta"] == pytest.approx(0.01, abs=1e-12)
    assert f["r_squared"] == pytest.approx(1.0, abs=1e-12)
    line = odonto.fit_biomarker([(3 * math.sqrt(a), a) for a in (0.01, 0.04, 0.09)])
    assert line["lambda"] == pytest.approx(3.0)
    assert odonto.predict_response(0.6, 1.0, 3.0, 0.0) == pytest.approx(0.04)
    assert odonto.mirror_unn(24) == 25
    assert odonto.spearman([1, 2, 3], [2, 4, 9]) == pytest.approx(1.0)
    with pytest.raises(odonto.InvalidInput):
        odonto.mirror_unn(5)
    with pytest.raises(odonto.Error):
        odonto.fit_sqrt([0.5], [1.0])


def test_patient_pipeline(tmp_path):
    p = odonto.default_patient("single")
    assert p["patient_id"] == "single"
    fam = odonto.patient_family(p)
    assert len(fam) == 3

    mesh, info = odonto.synth_assembly(p)
    mesh.validate()
    assert mesh.nodes.shape[1] == 3 and mesh.elements.shape == (len(mesh), 4)
    assert "load_patch_24" in mesh.boundary_sets and "gamma_D" in mesh.boundary_sets
    assert set(mesh.domain_codes) == {1, 24, 124}
    q = np.asarray(mesh.quality("radius_ratio"))
    assert q.shape == (len(mesh),) and q.min() > 0 and q.max() <= 1

    odonto.save_tetgen(mesh, str(tmp_path / "m.node"), str(tmp_path / "m.ele"))
    back = odonto.load_tetgen(str(tmp_path / "m.node"), str(tmp_path / "m.ele"))
    assert np.array_equal(back.elements, mesh.elements)

    bio = odonto.biomarkers("single", mesh, info)
    assert len(bio) == 1 and bio[0]["b"] > 0

    recs = odonto.sweep(mesh, "single", sweep={"load_min": 0.4, "load_max": 0.6})
    assert [r["load"] for r in recs] == [0.4, 0.5, 0.6]
    assert all(r["converged"] for r in recs)
    t = [r["t_mag"] for r in recs]
    assert t == sorted(t) and 0.01 <= t[0] <= 0.6
    assert np.linalg.norm(recs[0]["translation"]) == pytest.approx(t[0])


def test_invalid_template():
    with pytest.raises(odonto.InvalidInput):
        odonto.synth_assembly({"patient_id": "x", "teeth": [{"unn": 99}]})
    with pytest.raises(odonto.ParseError):
        odonto._core.synth_assembly("{broken")
