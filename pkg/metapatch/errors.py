"""
Exceptions raised by metapatch.

Every error knows the exit code the command line front end should return and can be dumped to a dictionary
for the machine readable error file.
"""


class MetapatchError(Exception):

    exit_code = 3

    def to_dict(self):
        return {'error': self.__class__.__name__, 'message': str(self), 'exit_code': self.exit_code}


class ValidationError(MetapatchError):
    exit_code = 2


class StageError(MetapatchError):
    exit_code = 3


# { Validation errors

class InvalidGeometry(ValidationError):

    def __init__(self, reason):
        super().__init__("Invalid sinusoidal design: {}".format(reason))
        self.reason = reason


class ConfigError(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class InvalidConfig(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class ZeroVariance(ValidationError):
    pass


class DegenerateCell(ValidationError):
    pass


class SingularElement(ValidationError):
    pass


class DisconnectedMesh(ValidationError):
    pass


class StaleArtifact(ValidationError):
    pass

# }

# { Stage errors

class NonConvergence(StageError):

    def __init__(self, step, residual):
        super().__init__("Newton iterations did not converge at load step {} "
                         "(relative residual {:.3e})".format(step, residual))
        self.step = step
        self.residual = residual

    def to_dict(self):
        res = super().to_dict()
        res.update(step=self.step, residual=float(self.residual))
        return res


class ExhaustedSampler(StageError):
    pass


class InsufficientLabels(StageError):
    pass


class NonFiniteLoss(StageError):

    def __init__(self, epoch, diagnostics=None):
        super().__init__("Loss became non-finite at epoch {}".format(epoch))
        self.epoch = epoch
        self.diagnostics = diagnostics or {}

    def to_dict(self):
        res = super().to_dict()
        res.update(epoch=self.epoch, diagnostics=self.diagnostics)
        return res


class RankingDisagreement(StageError):

    def __init__(self, target, attribution, sensitivity):
        super().__init__("{} surrogate: attribution ranking {} differs from sensitivity ranking {}".format(
            target, attribution, sensitivity))
        self.target = target
        self.attribution = list(attribution)
        self.sensitivity = list(sensitivity)

    def to_dict(self):
        res = super().to_dict()
        res.update(target=self.target, attribution=self.attribution, sensitivity=self.sensitivity)
        return res

# }
