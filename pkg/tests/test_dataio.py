import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from insitu_inc.dataio import (HEADER_BYTES, DatasetFormatError, MeshDataset, StreamExhaustedError,
                               SnapshotStream, dataset_from_bytes, dataset_to_bytes, gen_branch3d,
                               gen_pulse2d, read_dataset, stream_from, write_dataset)


# pulse2d -------------------------------------------------------------------------------

def test_pulse_shape_and_peak():
    ds = gen_pulse2d(32, 64, seed=7)
    assert (ds.n, ds.d, ds.T, ds.c) == (1024, 2, 64, 1)
    assert ds.snapshots[0].max() == 1.0
    assert ds.X.min() == 0.0 and ds.X.max() == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_pulse_mass_tracks_gaussian_integral(seed):
    ds = gen_pulse2d(32, 64, seed)
    mass = ds.snapshots.astype(np.float64).sum(axis=(1, 2)) / 31**2
    sig = np.linspace(ds.params["sigma0"], ds.params["sigma1"], 64)
    assert np.all(np.diff(mass) > 0)
    np.testing.assert_allclose(mass, 2 * np.pi * sig**2, rtol=0.05)


def test_pulse_deterministic():
    a, b = gen_pulse2d(16, 8, 3), gen_pulse2d(16, 8, 3)
    assert dataset_to_bytes(a) == dataset_to_bytes(b)
    assert dataset_to_bytes(a) != dataset_to_bytes(gen_pulse2d(16, 8, 4))


@pytest.mark.parametrize("side,T", [(7, 4), (8, 1)])
def test_pulse_bad_args(side, T):
    with pytest.raises(ValueError):
        gen_pulse2d(side, T)


# branch3d ------------------------------------------------------------------------------

def test_branch_root_is_maximum():
    ds = gen_branch3d(300, 10, seed=2)
    assert ds.snapshots[0, :, 0].argmax() == 0
    assert ds.snapshots[0, 0, 0] == 1.0


@pytest.mark.parametrize("seed", range(3))
def test_branch_decays_with_graph_distance(seed):
    ds = gen_branch3d(400, 12, seed)
    order = np.argsort(ds.params["graph_distance"], kind="stable")
    for t in range(ds.T):
        assert np.all(np.diff(ds.snapshots[t, order, 0].astype(np.float64)) <= 0)


def test_branch_deterministic_and_nonzero():
    a, b = gen_branch3d(150, 5, 9), gen_branch3d(150, 5, 9)
    assert dataset_to_bytes(a) == dataset_to_bytes(b)
    assert np.all(np.linalg.norm(a.snapshots, axis=1) > 0)


def test_branch_bad_args():
    with pytest.raises(ValueError):
        gen_branch3d(99, 4)


# INCD ---------------------------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.integers(1, 30), st.integers(1, 3), st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**31))
def test_round_trip_bit_exact(n, d, c, T, seed):
    rng = np.random.default_rng(seed)
    ds = MeshDataset(rng.normal(size=(n, d)).astype(np.float32),
                     rng.normal(size=(T, n, c)).astype(np.float32))
    data = dataset_to_bytes(ds)
    assert len(data) == HEADER_BYTES + 4 * (n * d + T * n * c)
    back = dataset_from_bytes(data)
    assert back.X.tobytes() == ds.X.tobytes()
    assert back.snapshots.tobytes() == ds.snapshots.tobytes()


def test_file_round_trip(tmp_path):
    ds = gen_pulse2d(8, 3, 0)
    size = write_dataset(tmp_path / "d.incd", ds)
    assert size == (tmp_path / "d.incd").stat().st_size == ds.file_bytes
    back = read_dataset(tmp_path / "d.incd")
    assert back.snapshots.tobytes() == ds.snapshots.tobytes()


def test_truncation_reports_offset():
    data = dataset_to_bytes(gen_pulse2d(8, 3, 0))
    with pytest.raises(DatasetFormatError, match=str(len(data) - 5)):
        dataset_from_bytes(data[:-5])
    with pytest.raises(DatasetFormatError, match="header"):
        dataset_from_bytes(data[:10])


def test_foreign_endian_vector_fails_magic():
    data = dataset_to_bytes(gen_pulse2d(8, 3, 0))
    # the same header written by a big-endian writer that packs the magic as a u32
    magic = struct.unpack("<I", data[:4])[0]
    swapped = struct.pack(">I", magic) + data[4:]
    with pytest.raises(DatasetFormatError, match="magic"):
        dataset_from_bytes(swapped)


def test_version_and_trailing_bytes():
    data = bytearray(dataset_to_bytes(gen_pulse2d(8, 3, 0)))
    with pytest.raises(DatasetFormatError):
        dataset_from_bytes(bytes(data) + b"\0")
    data[4] = 9
    with pytest.raises(DatasetFormatError, match="version"):
        dataset_from_bytes(bytes(data))


# streams -----------------------------------------------------------------------------

def test_stream_yields_each_snapshot_once():
    ds = gen_pulse2d(8, 5, 1)
    stream = stream_from(ds)
    assert len(stream) == 5
    items = list(stream)
    assert [t for t, _ in items] == list(range(5))
    for t, U in items:
        np.testing.assert_array_equal(U, ds.snapshots[t])
    with pytest.raises(StreamExhaustedError):
        list(stream)


def test_stream_rejects_non_increasing_t():
    U = np.zeros((3, 1), np.float32)
    stream = SnapshotStream(np.zeros((3, 2), np.float32), iter([(0, U), (0, U)]), 2)
    with pytest.raises(ValueError):
        list(stream)
