"""Exception hierarchy."""


class BoxMapError(Exception):
    pass


class PoseInObstacle(BoxMapError):
    pass


class PoseOutOfBounds(BoxMapError):
    pass


class NoWalls(BoxMapError):
    pass


class GeometryMismatch(BoxMapError):
    pass


class MalformedHeader(BoxMapError):
    pass


class UnknownEncoding(BoxMapError):
    pass


class MissingAnnotations(BoxMapError):
    pass


class Diverged(BoxMapError):
    pass


class NoPath(BoxMapError):
    pass


class TooManyRooms(BoxMapError):
    pass


class RobotOutsideGraph(BoxMapError):
    pass


class GenerationFailed(BoxMapError):
    pass


class EpisodeTimeout(BoxMapError):
    pass
