"""NIfTI-1 reader and writer (``.nii``, ``.nii.gz`` and ``.hdr``/``.img`` pairs).

Only the five scalar datatypes below are handled.  Data are stored x-fastest
(Fortran order) starting at ``vox_offset``; the byte order is detected from
``sizeof_hdr``.
"""
from __future__ import annotations

import gzip
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (IoError, MalformedQuaternion, TruncatedFile, UnrecognizedFormat,
                     UnsupportedDatatype, UnsupportedDimensions)
from .volume import Volume

HEADER_SIZE = 348
SINGLE_FILE_OFFSET = 352
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"
GZIP_MAGIC = b"\x1f\x8b"

DATATYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}
DATATYPE_CODES = {dt: code for code, dt in DATATYPES.items()}

HEADER_DTYPE = np.dtype([
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
])
assert HEADER_DTYPE.itemsize == HEADER_SIZE


@dataclass
class NiftiHeader:
    """The NIfTI-1 header fields this package reads and writes.

    Fields not listed here are written as zeros.
    """

    dim: tuple = (3, 1, 1, 1, 1, 1, 1, 1)
    datatype: int = 16
    bitpix: int = 32
    pixdim: tuple = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    vox_offset: float = float(SINGLE_FILE_OFFSET)
    scl_slope: float = 1.0
    scl_inter: float = 0.0
    qform_code: int = 0
    sform_code: int = 0
    quatern_b: float = 0.0
    quatern_c: float = 0.0
    quatern_d: float = 0.0
    qoffset_x: float = 0.0
    qoffset_y: float = 0.0
    qoffset_z: float = 0.0
    srow_x: tuple = (1.0, 0.0, 0.0, 0.0)
    srow_y: tuple = (0.0, 1.0, 0.0, 0.0)
    srow_z: tuple = (0.0, 0.0, 1.0, 0.0)
    xyzt_units: int = 2  # millimetres
    intent_code: int = 0
    descrip: bytes = b""
    magic: bytes = MAGIC_SINGLE
    sizeof_hdr: int = HEADER_SIZE
    endianness: str = field(default="<", compare=False)

    @property
    def qfac(self) -> float:
        return -1.0 if self.pixdim[0] < 0 else 1.0

    @classmethod
    def from_bytes(cls, raw: bytes) -> "NiftiHeader":
        if len(raw) < HEADER_SIZE:
            raise TruncatedFile(f"header needs {HEADER_SIZE} bytes, got {len(raw)}")
        endian = _detect_endianness(raw[:4])
        rec = np.frombuffer(raw[:HEADER_SIZE], dtype=HEADER_DTYPE.newbyteorder(endian))[0]
        magic = bytes(rec["magic"]).ljust(4, b"\x00")
        if magic not in (MAGIC_SINGLE, MAGIC_PAIR):
            raise UnrecognizedFormat(f"bad NIfTI magic {magic!r}")
        return cls(
            dim=tuple(int(d) for d in rec["dim"]),
            datatype=int(rec["datatype"]),
            bitpix=int(rec["bitpix"]),
            pixdim=tuple(float(p) for p in rec["pixdim"]),
            vox_offset=float(rec["vox_offset"]),
            scl_slope=float(rec["scl_slope"]),
            scl_inter=float(rec["scl_inter"]),
            qform_code=int(rec["qform_code"]),
            sform_code=int(rec["sform_code"]),
            quatern_b=float(rec["quatern_b"]),
            quatern_c=float(rec["quatern_c"]),
            quatern_d=float(rec["quatern_d"]),
            qoffset_x=float(rec["qoffset_x"]),
            qoffset_y=float(rec["qoffset_y"]),
            qoffset_z=float(rec["qoffset_z"]),
            srow_x=tuple(float(s) for s in rec["srow_x"]),
            srow_y=tuple(float(s) for s in rec["srow_y"]),
            srow_z=tuple(float(s) for s in rec["srow_z"]),
            xyzt_units=int(rec["xyzt_units"]),
            intent_code=int(rec["intent_code"]),
            descrip=bytes(rec["descrip"]),
            magic=magic,
            sizeof_hdr=int(rec["sizeof_hdr"]),
            endianness=endian,
        )

    def to_bytes(self, endianness="<") -> bytes:
        rec = np.zeros((), dtype=HEADER_DTYPE.newbyteorder(endianness))
        rec["sizeof_hdr"] = HEADER_SIZE
        rec["regular"] = b"r"
        for name in ("dim", "datatype", "bitpix", "pixdim", "vox_offset", "scl_slope",
                     "scl_inter", "qform_code", "sform_code", "quatern_b", "quatern_c",
                     "quatern_d", "qoffset_x", "qoffset_y", "qoffset_z", "srow_x", "srow_y",
                     "srow_z", "xyzt_units", "intent_code", "descrip", "magic"):
            rec[name] = getattr(self, name)
        return rec.tobytes()

    @property
    def data_shape(self) -> tuple:
        """``(X, Y, Z, C)`` implied by ``dim``."""
        ndim = self.dim[0]
        if not 1 <= ndim <= 7:
            raise UnrecognizedFormat(f"dim[0] = {ndim} outside [1, 7]")
        dims = [self.dim[i] if i <= ndim else 1 for i in range(1, 8)]
        if any(d < 1 for d in dims[:ndim]):
            raise UnrecognizedFormat(f"non-positive dimension in {self.dim}")
        if any(d > 1 for d in dims[5:]):
            raise UnsupportedDimensions(f"dimensions beyond dim[5] not supported: {self.dim}")
        t, u = dims[3], dims[4]
        if t > 1 and u > 1:
            raise UnsupportedDimensions(f"both time and vector dimensions set: {self.dim}")
        return (dims[0], dims[1], dims[2], max(t, u))


def _detect_endianness(first4: bytes) -> str:
    if len(first4) < 4:
        raise TruncatedFile("file shorter than 4 bytes")
    if int.from_bytes(first4, "little") == HEADER_SIZE:
        return "<"
    if int.from_bytes(first4, "big") == HEADER_SIZE:
        return ">"
    raise UnrecognizedFormat("sizeof_hdr is not 348 in either byte order")


def quaternion_to_rotation(b, c, d) -> np.ndarray:
    residual = 1.0 - (b * b + c * c + d * d)
    if residual < -1e-5:
        raise MalformedQuaternion(f"b^2 + c^2 + d^2 = {1.0 - residual:.6g} exceeds 1")
    a = np.sqrt(max(0.0, residual))
    return np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ])


def qform_to_affine(h: NiftiHeader) -> np.ndarray:
    """Affine from the quaternion parameters, voxel sizes and qfac."""
    rot = quaternion_to_rotation(h.quatern_b, h.quatern_c, h.quatern_d)
    zooms = np.array(h.pixdim[1:4], dtype=np.float64)
    zooms[2] *= h.qfac
    affine = np.eye(4)
    affine[:3, :3] = rot * zooms
    affine[:3, 3] = (h.qoffset_x, h.qoffset_y, h.qoffset_z)
    return affine


def sform_to_affine(h: NiftiHeader) -> np.ndarray:
    affine = np.eye(4)
    affine[:3] = np.array([h.srow_x, h.srow_y, h.srow_z], dtype=np.float64)
    return affine


def header_affine(h: NiftiHeader) -> np.ndarray:
    """sform when set, else qform, else a diagonal of the voxel sizes."""
    if h.sform_code > 0:
        return sform_to_affine(h)
    if h.qform_code > 0:
        return qform_to_affine(h)
    zooms = [p if p > 0 else 1.0 for p in h.pixdim[1:4]]
    return np.diag(zooms + [1.0])


def affine_to_qform(affine):
    """Quaternion ``(b, c, d)``, voxel sizes, qfac and offsets closest to ``affine``.

    Shear is discarded (the rotation is the orthonormal polar factor).
    """
    m = np.asarray(affine, dtype=np.float64)[:3, :3]
    zooms = np.linalg.norm(m, axis=0)
    zooms[zooms == 0] = 1.0
    r = m / zooms
    qfac = 1.0
    if np.linalg.det(r) < 0:
        qfac = -1.0
        r[:, 2] = -r[:, 2]
    u, _, vt = np.linalg.svd(r)
    r = u @ vt
    # Shepperd's method
    trace = np.trace(r)
    if trace > 0:
        s = 0.5 / np.sqrt(trace + 1.0)
        a = 0.25 / s
        b = (r[2, 1] - r[1, 2]) * s
        c = (r[0, 2] - r[2, 0]) * s
        d = (r[1, 0] - r[0, 1]) * s
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        a = (r[2, 1] - r[1, 2]) / s
        b = 0.25 * s
        c = (r[0, 1] + r[1, 0]) / s
        d = (r[0, 2] + r[2, 0]) / s
    elif r[1, 1] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        a = (r[0, 2] - r[2, 0]) / s
        b = (r[0, 1] + r[1, 0]) / s
        c = 0.25 * s
        d = (r[1, 2] + r[2, 1]) / s
    else:
        s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        a = (r[1, 0] - r[0, 1]) / s
        b = (r[0, 2] + r[2, 0]) / s
        c = (r[1, 2] + r[2, 1]) / s
        d = 0.25 * s
    if a < 0:
        b, c, d = -b, -c, -d
    return (b, c, d), tuple(zooms), qfac, tuple(np.asarray(affine, dtype=np.float64)[:3, 3])


def _read_bytes(path: Path) -> bytes:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if raw[:2] == GZIP_MAGIC:
        try:
            raw = gzip.decompress(raw)
        except (EOFError, gzip.BadGzipFile) as exc:
            raise TruncatedFile(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def _pair_image_path(hdr_path: Path) -> Path:
    stem = str(hdr_path)
    for suffix in (".hdr.gz", ".hdr"):
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]
            break
    for candidate in (stem + ".img", stem + ".img.gz"):
        if os.path.exists(candidate):
            return Path(candidate)
    raise IoError(f"{hdr_path}: companion .img file not found")


def read_nifti(path) -> tuple:
    """Load a NIfTI-1 file.  Returns ``(Volume, NiftiHeader)``.

    Scaled data (``scl_slope`` not 0 and not the identity pair 1/0) are
    materialized as float32 (float64 for float64 storage); otherwise the
    native dtype is kept.
    """
    path = Path(path)
    raw = _read_bytes(path)
    header = NiftiHeader.from_bytes(raw)
    if header.magic == MAGIC_PAIR:
        payload = _read_bytes(_pair_image_path(path))
        offset = int(header.vox_offset)
    else:
        payload = raw
        offset = int(header.vox_offset)
        if offset < SINGLE_FILE_OFFSET:
            offset = SINGLE_FILE_OFFSET

    if header.datatype not in DATATYPES:
        raise UnsupportedDatatype(header.datatype)
    shape = header.data_shape
    dtype = DATATYPES[header.datatype].newbyteorder(header.endianness)
    count = int(np.prod(shape))
    needed = offset + count * dtype.itemsize
    if len(payload) < needed:
        raise TruncatedFile(f"{path}: data section needs {needed} bytes, file has {len(payload)}")

    flat = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
    data = flat.reshape(shape, order="F").astype(dtype.newbyteorder("="))

    slope, inter = header.scl_slope, header.scl_inter
    if np.isfinite(slope) and slope != 0 and not (slope == 1 and inter == 0):
        out_dtype = np.float64 if data.dtype == np.float64 else np.float32
        if not np.isfinite(inter):
            inter = 0.0
        data = (data.astype(np.float64) * slope + inter).astype(out_dtype)
    return Volume(data, header_affine(header)), header


def load_volume(path) -> Volume:
    return read_nifti(path)[0]


def header_for(v: Volume, template: NiftiHeader | None = None) -> NiftiHeader:
    """Header describing ``v``: sform (code 1) and qform from its affine, unit scaling."""
    template = template or NiftiHeader()
    code = DATATYPE_CODES.get(v.dtype.newbyteorder("="))
    if code is None:
        raise UnsupportedDatatype(str(v.dtype))
    x, y, z = v.shape
    c = v.n_channels
    dim = (4, x, y, z, c, 1, 1, 1) if c > 1 else (3, x, y, z, 1, 1, 1, 1)
    (qb, qc, qd), zooms, qfac, offset = affine_to_qform(v.affine)
    affine = v.affine
    return replace(
        template,
        dim=dim,
        datatype=code,
        bitpix=8 * v.dtype.itemsize,
        pixdim=(qfac, *(float(s) for s in v.spacing), 1.0, 1.0, 1.0, 1.0),
        vox_offset=float(SINGLE_FILE_OFFSET),
        scl_slope=1.0,
        scl_inter=0.0,
        qform_code=template.qform_code or 1,
        sform_code=1,
        quatern_b=qb,
        quatern_c=qc,
        quatern_d=qd,
        qoffset_x=offset[0],
        qoffset_y=offset[1],
        qoffset_z=offset[2],
        srow_x=tuple(affine[0]),
        srow_y=tuple(affine[1]),
        srow_z=tuple(affine[2]),
        magic=MAGIC_SINGLE,
        sizeof_hdr=HEADER_SIZE,
    )


def nifti_bytes(v: Volume, template: NiftiHeader | None = None) -> bytes:
    header = header_for(v, template)
    body = np.asarray(v.data, dtype=v.dtype.newbyteorder("<"))
    if v.n_channels == 1:
        body = body[..., 0]
    return header.to_bytes("<") + b"\x00" * 4 + body.tobytes(order="F")


def write_nifti(v: Volume, path, template: NiftiHeader | None = None) -> Path:
    """Write ``v`` as a single-file NIfTI-1; gzip-compressed when the name ends in ``.gz``.

    Compressed output carries a zero mtime so repeated writes are byte-identical.
    """
    path = Path(path)
    payload = nifti_bytes(v, template)
    if path.name.endswith(".gz"):
        payload = gzip.compress(payload, compresslevel=6, mtime=0)
    try:
        path.write_bytes(payload)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path
