"""Exception hierarchy shared by all infoflow modules."""


class InfoflowError(Exception):
    """Base class for every error raised by the package."""


class IngestError(InfoflowError):
    pass


class MissingColumn(IngestError):
    pass


class TypeParseError(IngestError):
    def __init__(self, feature, row, value):
        self.feature = feature
        self.row = row
        self.value = value
        super().__init__(
            f"feature {feature!r}: cannot parse {value!r} as a number (data row {row})"
        )


class DuplicateFeature(IngestError):
    pass


class EmptyTable(IngestError):
    pass


class MissingValue(IngestError):
    pass


class ManifestError(IngestError):
    pass


class UnknownDataset(IngestError):
    pass


class DatasetUnavailable(IngestError):
    """A known built-in dataset whose data file is not present on this machine."""


class RenormError(InfoflowError):
    pass


class EmptyInput(RenormError):
    pass


class ValueOutsideBins(RenormError):
    pass


class UnmappedLabel(RenormError):
    pass


class NoCodingSource(RenormError):
    pass


class LengthMismatch(InfoflowError):
    pass


class TreeError(InfoflowError):
    pass


class AsymmetricInput(TreeError):
    pass


class NegativeDistance(TreeError):
    pass


class KTooLarge(TreeError):
    pass


class DimensionTooSmall(InfoflowError):
    pass


class FlowError(InfoflowError):
    pass


class SubjectMismatch(FlowError):
    pass


class EmptyStages(FlowError):
    pass


class UnknownSubject(FlowError):
    pass


class FitError(InfoflowError):
    pass


class Separation(FitError):
    pass


class SingularHessian(FitError):
    pass


class RenderError(InfoflowError):
    pass


class ConfigError(InfoflowError):
    """An invalid run configuration or command-line option."""
