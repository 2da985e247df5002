import numpy as np
import pandas as pd
import pytest

from decomp import DecompLayout
from exceptions import ImageFormatError
from grid import GridDomain, GridFunction
from images import load_image
from models import EnergyTrace
from storage import ArtifactStore


def trace_of(energies):
    trace = EnergyTrace()
    for k, energy in enumerate(energies):
        trace.record(k, energy)
    return trace


def read_flow(path, domain):
    """Rebuild a flow field from its x1,x2,u1,u2 rows"""
    frame = pd.read_csv(path, float_precision="round_trip")
    index = tuple(frame[f"x{k + 1}"].to_numpy() - domain.a[k] for k in range(domain.dims))
    values = np.zeros(domain.shape + (2,))
    values[index] = frame[["u1", "u2"]].to_numpy()
    return GridFunction(domain=domain, values=values)


def test_relative_paths_land_under_root(tmp_path, field_of):
    store = ArtifactStore(tmp_path / "run")
    path = store.save_image(field_of([[0.0, 1.0], [0.5, 0.25]]), "images/out.png")
    assert path == tmp_path / "run" / "images" / "out.png"
    assert path.exists()
    assert store.written == [path]
    np.testing.assert_allclose(load_image(path).scalar(), [[0.0, 1.0], [0.5, 0.25]], atol=0.5 / 255.0)


def test_failed_write_is_raised_and_not_recorded(tmp_path, field_of):
    store = ArtifactStore(tmp_path)
    with pytest.raises(ImageFormatError):
        store.save_image(field_of(np.zeros((2, 2))), "out.unknownext")
    assert store.written == []


def test_trace_csv_keeps_full_precision(tmp_path):
    store = ArtifactStore(tmp_path)
    energies = [1.0 / 3.0, 0.1 + 0.2, 1e-17]
    path = store.save_trace(trace_of(energies), "energy.csv")
    frame = pd.read_csv(path, float_precision="round_trip")
    assert frame["k"].tolist() == [0, 1, 2]
    assert frame["energy"].tolist() == energies


def test_comparison_columns(tmp_path):
    store = ArtifactStore(tmp_path)
    traces = {
        "glob_energy": trace_of([3.0, 2.0, 1.5]),
        "ddseq_energy": trace_of([3.0, 1.8, 1.4]),
        "ddpar_energy": trace_of([3.0, 2.5, 2.0]),
    }
    frame = pd.read_csv(store.save_comparison(traces, "compare.csv"), float_precision="round_trip")
    assert list(frame.columns) == ["k", "glob_energy", "ddseq_energy", "ddpar_energy"]
    assert frame["ddseq_energy"].tolist() == [3.0, 1.8, 1.4]
    assert len(frame) == 3


def test_flow_csv(tmp_path, rng):
    domain = GridDomain.from_shape((3, 4))
    flow = GridFunction(domain=domain, values=rng.standard_normal((3, 4, 2)))
    path = ArtifactStore(tmp_path).save_flow(flow, "flow.csv")
    frame = pd.read_csv(path, float_precision="round_trip")
    assert list(frame.columns) == ["x1", "x2", "u1", "u2"]
    assert frame.iloc[0][["x1", "x2"]].tolist() == [1, 1]
    assert frame.iloc[-1][["x1", "x2"]].tolist() == [3, 4]
    np.testing.assert_array_equal(read_flow(path, domain).values, flow.values)


def test_flow_color_image(tmp_path):
    flow = GridFunction(domain=GridDomain.from_shape((5, 6)), values=np.zeros((5, 6, 2)))
    path = ArtifactStore(tmp_path).save_flow_color(flow, "flow.png")
    assert load_image(path).domain.shape == (5, 6)


def test_layout_csv(tmp_path):
    layout = DecompLayout.build(GridDomain.from_shape((10, 8)), 2, 2)
    frame = pd.read_csv(ArtifactStore(tmp_path).save_layout(layout, "layout.csv"))
    assert list(frame.columns) == ["x1", "x2", "subdomain", "color", "theta"]
    assert sorted(frame["subdomain"].unique()) == [1, 2, 3, 4]
    assert frame.groupby(["x1", "x2"])["theta"].sum().to_numpy() == pytest.approx(1.0)
    assert len(frame.groupby(["x1", "x2"])) == 80
