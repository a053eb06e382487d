"""Exception hierarchy.

Every error raised by the toolkit derives from :class:`VoxelpipeError`.  The
three direct subclasses map onto CLI exit codes (config 2, data 3, runtime 4).
"""


class VoxelpipeError(Exception):
    exit_code = 4


class ConfigError(VoxelpipeError):
    exit_code = 2


class DataError(VoxelpipeError):
    exit_code = 3


class PreconditionViolation(VoxelpipeError, ValueError):
    exit_code = 4


# -- geometry ---------------------------------------------------------------

class AffineSingular(DataError):
    pass


# -- NIfTI ------------------------------------------------------------------

class NiftiError(DataError):
    pass


class UnrecognizedFormat(NiftiError):
    pass


class UnsupportedDatatype(NiftiError):
    def __init__(self, code):
        super().__init__(f"unsupported NIfTI datatype code {code}")
        self.code = code


class UnsupportedDimensions(NiftiError):
    pass


class TruncatedFile(NiftiError):
    pass


class MalformedQuaternion(NiftiError):
    pass


class IoError(DataError, OSError):
    pass


# -- dataset ----------------------------------------------------------------

class EmptyDataset(DataError):
    pass


class MissingModality(DataError):
    def __init__(self, subject, source):
        super().__init__(f"subject {subject!r} has no file for source {source!r}")
        self.subject = subject
        self.source = source


class AmbiguousMatch(DataError):
    def __init__(self, source, subject, files):
        super().__init__(
            f"source {source!r}: {len(files)} files map to subject {subject!r}: {sorted(files)}")
        self.source = source
        self.subject = subject
        self.files = list(files)


class ManifestPathMissing(DataError):
    def __init__(self, row, column):
        super().__init__(f"manifest row {row}, column {column!r}: path missing")
        self.row = row
        self.column = column


class DuplicateSubject(DataError):
    pass


# -- normalization ----------------------------------------------------------

class EmptyMask(DataError):
    pass


class DegenerateHistogram(DataError):
    def __init__(self, subject, detail="fewer than 2 distinct intensities"):
        super().__init__(f"degenerate histogram for {subject!r}: {detail}")
        self.subject = subject


# -- sampling / aggregation -------------------------------------------------

class InvalidWeightMap(DataError):
    pass


class SamplerError(VoxelpipeError):
    pass


class UnexpectedWindow(VoxelpipeError):
    pass


class IncompleteCoverage(VoxelpipeError):
    def __init__(self, missing):
        super().__init__(f"{missing} voxels never written")
        self.missing = missing


# -- evaluation -------------------------------------------------------------

class ShapeMismatch(DataError):
    pass


# -- configuration ----------------------------------------------------------

class UnknownConfigKey(ConfigError):
    def __init__(self, section, key):
        super().__init__(f"unknown configuration key [{section}] {key}")
        self.section = section
        self.key = key


class ConfigTypeError(ConfigError):
    pass
