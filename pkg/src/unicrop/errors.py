"""Exception hierarchy shared by the pipeline stages."""


class UniCropError(Exception):
    """Base class for all pipeline errors."""


# schema / configuration
class ConfigError(UniCropError):
    pass


class MissingHeader(ConfigError):
    pass


class DuplicateKeyVariable(ConfigError):
    pass


class UnknownFamily(ConfigError):
    pass


class EmptyAfterCleaning(ConfigError):
    pass


class EmptyPlan(ConfigError):
    pass


# acquisition
class AcquisitionError(UniCropError):
    pass


class NoFetcherForPlatform(AcquisitionError):
    pass


class CacheCorruption(AcquisitionError):
    pass


class HttpStatusError(AcquisitionError):
    def __init__(self, status_code, url=""):
        super().__init__(f"HTTP {status_code} for {url}")
        self.status_code = status_code
        self.url = url


class ParsePayloadError(AcquisitionError):
    pass


class MissingInputSeries(AcquisitionError):
    pass


class MisalignedDates(AcquisitionError):
    pass


# harmonisation
class HarmonizeError(UniCropError):
    pass


class UnknownFieldId(HarmonizeError):
    pass


class ColumnNameCollision(HarmonizeError):
    pass


class SpecMissingForColumn(HarmonizeError):
    pass


# engineering / statistics
class EmptyWindow(UniCropError):
    pass


class TooFewSamples(UniCropError):
    pass


class EmptyPool(UniCropError):
    pass


class TooFewColumns(UniCropError):
    pass


class NoUsableNeighbours(UniCropError):
    pass


# modelling
class ModellingError(UniCropError):
    pass


class NonFiniteInput(ModellingError):
    pass


class NonConvergence(ModellingError, RuntimeWarning):
    pass


class SchemaMismatch(ModellingError):
    pass


class TooFewRows(ModellingError):
    pass


class LengthMismatch(ModellingError):
    pass


class NoModels(ModellingError):
    pass


class TooManyFeaturesForExact(ModellingError):
    pass
