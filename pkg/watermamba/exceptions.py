class WaterMambaException(Exception):
    pass

class ShapeException(WaterMambaException, ValueError):
    pass

class ImageFormatException(WaterMambaException):
    pass

class MetricException(WaterMambaException, ValueError):
    pass

""" Raised while decoding a weight file. """
class WeightFileException(WaterMambaException):
    pass

class BadMagicException(WeightFileException):
    pass

class VersionMismatchException(WeightFileException):
    pass

class TruncatedFileException(WeightFileException):
    pass

class ChecksumMismatchException(WeightFileException):
    pass

""" Raised when a weight store does not match the tensors a config requires. """
class WeightStoreException(WaterMambaException):
    def __init__(self, names, message: str):
        self.names = list(names)
        super().__init__(f"{ message }: { ', '.join(self.names) }")

class MissingTensorException(WeightStoreException):
    def __init__(self, names):
        super().__init__(names, "Weight store is missing tensors")

class UnexpectedTensorException(WeightStoreException):
    def __init__(self, names):
        super().__init__(names, "Weight store has unexpected tensors")

class TensorShapeException(WeightStoreException):
    def __init__(self, names):
        super().__init__(names, "Weight store has mis-shaped tensors")
