"""NIfTI I/O against a hand-packed reference writer.

Valid files of every supported shape come from tests/helpers.py, which
packs headers field by field; every rejection path is driven by a file
malformed in exactly one way.
"""

import gzip

import numpy as np
import pytest

from helpers import build_nifti_bytes, write_nifti
from lesionforge.nifti import (
    NiftiCorruptError,
    NiftiError,
    NiftiFormatError,
    load_binary_mask,
    load_volume,
    save_mask,
    save_volume,
)
from lesionforge.volume import BinaryMask, Volume


@pytest.fixture
def vol_data(rng):
    return rng.normal(100.0, 20.0, (5, 6, 7))


# ---------------------------------------------------------------------------
# round trips through the library writer

def test_float64_round_trip_is_exact(tmp_path, vol_data):
    v = Volume(vol_data, spacing=(0.5, 1.0, 2.0))
    save_volume(v, tmp_path / "v.nii.gz", datatype="float64")
    back = load_volume(tmp_path / "v.nii.gz")
    assert np.array_equal(back.data, v.data)
    assert back.dims == v.dims
    # header geometry is float32 precision
    assert np.abs(np.subtract(back.spacing, v.spacing)).max() < 1e-6
    assert np.abs(back.affine - v.affine).max() < 1e-6


def test_float32_round_trip_exact_for_representable_data(tmp_path, vol_data):
    v = Volume(vol_data.astype(np.float32))
    save_volume(v, tmp_path / "v.nii.gz", datatype="float32")
    back = load_volume(tmp_path / "v.nii.gz")
    assert np.array_equal(back.data, v.data)


def test_integer_write_rounds_to_nearest(tmp_path):
    v = Volume(np.array([[[1.4, 2.6], [-0.4, 7.0]], [[0.0, 3.5], [2.5, 9.9]]]))
    save_volume(v, tmp_path / "v.nii.gz", datatype="int16")
    back = load_volume(tmp_path / "v.nii.gz")
    assert np.array_equal(back.data, np.rint(v.data))


def test_integer_write_range_check(tmp_path):
    v = Volume(np.full((2, 2, 2), 400.0))
    with pytest.raises(ValueError, match="does not fit"):
        save_volume(v, tmp_path / "v.nii.gz", datatype="uint8")
    save_volume(v, tmp_path / "v.nii.gz", datatype="int16")  # fits


def test_unsupported_write_datatype(tmp_path):
    v = Volume(np.zeros((2, 2, 2)))
    with pytest.raises(NiftiFormatError, match="int32"):
        save_volume(v, tmp_path / "v.nii.gz", datatype="int32")


def test_save_is_byte_deterministic(tmp_path, vol_data):
    v = Volume(vol_data)
    save_volume(v, tmp_path / "a.nii.gz")
    save_volume(v, tmp_path / "b.nii.gz")
    assert (tmp_path / "a.nii.gz").read_bytes() == (tmp_path / "b.nii.gz").read_bytes()


def test_plain_nii_round_trip(tmp_path, vol_data):
    v = Volume(vol_data)
    save_volume(v, tmp_path / "v.nii", datatype="float64")
    raw = (tmp_path / "v.nii").read_bytes()
    assert raw[:2] != b"\x1f\x8b"  # actually uncompressed
    assert np.array_equal(load_volume(tmp_path / "v.nii").data, v.data)


def test_mask_round_trip_writes_uint8_zero_one(tmp_path, rng):
    m = BinaryMask(rng.random((4, 4, 4)) > 0.5, spacing=(1.0, 2.0, 3.0))
    save_mask(m, tmp_path / "m.nii.gz")
    blob = gzip.decompress((tmp_path / "m.nii.gz").read_bytes())
    payload = np.frombuffer(blob[352:], dtype=np.uint8)
    assert set(np.unique(payload)) <= {0, 1}
    back = load_binary_mask(tmp_path / "m.nii.gz")
    assert np.array_equal(back.data, m.data)
    assert back.spacing == m.spacing


def test_affine_survives_round_trip(tmp_path):
    affine = np.array(
        [
            [0.0, -1.0, 0.0, 10.0],
            [1.0, 0.0, 0.0, -5.0],
            [0.0, 0.0, 2.0, 3.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    v = Volume(np.zeros((3, 3, 3)), spacing=(1.0, 1.0, 2.0), affine=affine)
    save_volume(v, tmp_path / "v.nii.gz")
    assert np.abs(load_volume(tmp_path / "v.nii.gz").affine - affine).max() < 1e-6


# ---------------------------------------------------------------------------
# reading files produced by the independent writer

def test_reads_reference_writer_output(tmp_path, rng):
    data = rng.integers(0, 200, (4, 5, 6)).astype(np.float32)
    write_nifti(tmp_path / "r.nii.gz", data, spacing=(1.0, 1.5, 2.0))
    v = load_volume(tmp_path / "r.nii.gz")
    assert np.array_equal(v.data, data.astype(np.float64))
    assert v.spacing == (1.0, 1.5, 2.0)
    assert np.allclose(v.affine, np.diag([1.0, 1.5, 2.0, 1.0]))


def test_scl_slope_and_inter_are_applied(tmp_path):
    data = np.full((2, 2, 2), 3, dtype=np.int16)
    write_nifti(tmp_path / "s.nii", data, dtype="int16", scl_slope=2.0, scl_inter=1.0)
    v = load_volume(tmp_path / "s.nii")
    assert np.all(v.data == 7.0)  # 3 * 2 + 1


def test_scl_slope_zero_means_no_scaling(tmp_path):
    data = np.full((2, 2, 2), 3, dtype=np.int16)
    write_nifti(tmp_path / "s.nii", data, dtype="int16", scl_slope=0.0, scl_inter=0.0)
    assert np.all(load_volume(tmp_path / "s.nii").data == 3.0)


def test_scl_slope_zero_with_inter_applies_inter_only(tmp_path):
    data = np.full((2, 2, 2), 3, dtype=np.int16)
    write_nifti(tmp_path / "s.nii", data, dtype="int16", scl_slope=0.0, scl_inter=5.0)
    assert np.all(load_volume(tmp_path / "s.nii").data == 8.0)


def test_sform_preferred_over_qform(tmp_path):
    sform = np.array(
        [
            [-1.0, 0.0, 0.0, 9.0],
            [0.0, 1.0, 0.0, 2.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    write_nifti(
        tmp_path / "g.nii", np.zeros((3, 3, 3), np.float32),
        sform=sform, sform_code=1, qform_code=1, qoffset=(99.0, 99.0, 99.0),
    )
    v = load_volume(tmp_path / "g.nii")
    assert np.allclose(v.affine, sform)


def test_qform_identity_quaternion(tmp_path):
    write_nifti(
        tmp_path / "q.nii", np.zeros((3, 3, 3), np.float32),
        spacing=(1.0, 2.0, 3.0), qform_code=1, qoffset=(5.0, 6.0, 7.0),
    )
    v = load_volume(tmp_path / "q.nii")
    expected = np.diag([1.0, 2.0, 3.0, 1.0])
    expected[:3, 3] = (5.0, 6.0, 7.0)
    assert np.allclose(v.affine, expected)


def test_qform_nontrivial_quaternion_and_qfac(tmp_path):
    # b=1: 180 degrees about x, so columns y and z negate
    write_nifti(
        tmp_path / "q.nii", np.zeros((3, 3, 3), np.float32),
        quaternion=(1.0, 0.0, 0.0), qform_code=1,
    )
    v = load_volume(tmp_path / "q.nii")
    assert np.allclose(v.affine[:3, :3], np.diag([1.0, -1.0, -1.0]))

    write_nifti(
        tmp_path / "qf.nii", np.zeros((3, 3, 3), np.float32),
        qform_code=1, qfac=-1.0,
    )
    v2 = load_volume(tmp_path / "qf.nii")
    assert np.allclose(v2.affine[:3, :3], np.diag([1.0, 1.0, -1.0]))


def test_pixdim_fallback_when_no_codes(tmp_path):
    write_nifti(tmp_path / "p.nii", np.zeros((3, 3, 3), np.float32),
                spacing=(2.0, 2.0, 2.0))
    v = load_volume(tmp_path / "p.nii")
    assert np.allclose(v.affine, np.diag([2.0, 2.0, 2.0, 1.0]))


def test_trailing_singleton_4d_is_accepted(tmp_path):
    data = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
    write_nifti(tmp_path / "d4.nii", data, dim0=4, dim4=1)
    assert load_volume(tmp_path / "d4.nii").dims == (2, 2, 2)


def test_uint8_and_float64_payloads(tmp_path):
    write_nifti(tmp_path / "u8.nii", np.arange(8).reshape(2, 2, 2), dtype="uint8")
    assert np.array_equal(
        load_volume(tmp_path / "u8.nii").data, np.arange(8).reshape(2, 2, 2)
    )
    data = np.linspace(0, 1, 8).reshape(2, 2, 2)
    write_nifti(tmp_path / "f8.nii", data, dtype="float64")
    assert np.array_equal(load_volume(tmp_path / "f8.nii").data, data)


def test_binary_mask_treats_any_nonzero_as_foreground(tmp_path):
    data = np.array([[[0, 3], [-2, 0]], [[1, 0], [0, 7]]], dtype=np.int16)
    write_nifti(tmp_path / "m.nii", data, dtype="int16")
    m = load_binary_mask(tmp_path / "m.nii")
    assert np.array_equal(m.data, data != 0)


def test_fortran_order_payload_layout(tmp_path):
    # first payload element must be [0,0,0], second [1,0,0]
    data = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    write_nifti(tmp_path / "f.nii", data)
    raw = (tmp_path / "f.nii").read_bytes()
    payload = np.frombuffer(raw[352:], dtype="<f4")
    assert payload[0] == data[0, 0, 0]
    assert payload[1] == data[1, 0, 0]
    assert np.array_equal(load_volume(tmp_path / "f.nii").data, data)


# ---------------------------------------------------------------------------
# rejection paths, one defect per file

def _base(tmp_path, name="bad.nii", **kwargs):
    return write_nifti(tmp_path / name, np.zeros((2, 2, 2), np.float32), **kwargs)


def test_rejects_truncated_header(tmp_path):
    p = tmp_path / "short.nii"
    p.write_bytes(build_nifti_bytes(np.zeros((2, 2, 2), np.float32))[:100])
    with pytest.raises(NiftiCorruptError, match="shorter"):
        load_volume(p)


def test_rejects_big_endian(tmp_path):
    p = _base(tmp_path, byteorder=">")
    with pytest.raises(NiftiFormatError, match="big-endian"):
        load_volume(p)


def test_rejects_garbage_sizeof_hdr(tmp_path):
    blob = bytearray(build_nifti_bytes(np.zeros((2, 2, 2), np.float32)))
    blob[:4] = (123).to_bytes(4, "little")
    p = tmp_path / "g.nii"
    p.write_bytes(bytes(blob))
    with pytest.raises(NiftiCorruptError, match="sizeof_hdr"):
        load_volume(p)


def test_rejects_two_file_magic(tmp_path):
    p = _base(tmp_path, magic=b"ni1\x00")
    with pytest.raises(NiftiFormatError, match="two-file"):
        load_volume(p)


def test_rejects_unknown_magic(tmp_path):
    p = _base(tmp_path, magic=b"abcd")
    with pytest.raises(NiftiCorruptError, match="magic"):
        load_volume(p)


def test_rejects_wrong_dimensionality(tmp_path):
    with pytest.raises(NiftiFormatError, match="3-D"):
        load_volume(_base(tmp_path, dim0=2))
    with pytest.raises(NiftiFormatError, match="3-D"):
        load_volume(_base(tmp_path, dim0=4, dim4=2))


def test_rejects_unsupported_datatype_code(tmp_path):
    p = _base(tmp_path, datatype_code=8, bitpix=32)  # int32
    with pytest.raises(NiftiFormatError, match="datatype code 8"):
        load_volume(p)


def test_rejects_bitpix_mismatch(tmp_path):
    p = _base(tmp_path, bitpix=16)  # float32 payload claiming 16 bits
    with pytest.raises(NiftiCorruptError, match="bitpix"):
        load_volume(p)


def test_rejects_nonpositive_pixdim(tmp_path):
    p = _base(tmp_path, spacing=(1.0, 0.0, 1.0))
    with pytest.raises(NiftiCorruptError, match="pixdim"):
        load_volume(p)


def test_rejects_low_vox_offset(tmp_path):
    p = _base(tmp_path, vox_offset=300.0)
    with pytest.raises(NiftiCorruptError, match="vox_offset"):
        load_volume(p)


def test_rejects_header_extensions(tmp_path):
    p = _base(tmp_path, extension=b"\x01\x00\x00\x00")
    with pytest.raises(NiftiFormatError, match="extensions"):
        load_volume(p)


def test_rejects_truncated_payload(tmp_path):
    blob = build_nifti_bytes(np.zeros((4, 4, 4), np.float32))
    p = tmp_path / "t.nii"
    p.write_bytes(blob[:-10])
    with pytest.raises(NiftiCorruptError, match="truncated data"):
        load_volume(p)


def test_rejects_zero_dim(tmp_path):
    blob = bytearray(build_nifti_bytes(np.zeros((2, 2, 2), np.float32)))
    # dim[1] lives at offset 40+2
    blob[42:44] = (0).to_bytes(2, "little")
    p = tmp_path / "z.nii"
    p.write_bytes(bytes(blob))
    with pytest.raises(NiftiCorruptError, match="non-positive dims"):
        load_volume(p)


def test_rejects_corrupt_gzip(tmp_path):
    p = tmp_path / "c.nii.gz"
    p.write_bytes(b"\x1f\x8b" + b"this is not a gzip stream")
    with pytest.raises(NiftiCorruptError, match="gzip"):
        load_volume(p)


def test_error_hierarchy():
    assert issubclass(NiftiFormatError, NiftiError)
    assert issubclass(NiftiCorruptError, NiftiError)
