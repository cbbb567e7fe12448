class RoadMCLError(Exception):
    """Base class for all errors raised by roadmcl."""


class OsmParseError(RoadMCLError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class MapStructureError(RoadMCLError):
    def __init__(self, way_id: int, message: str):
        self.way_id = way_id
        super().__init__(f"way {way_id}: {message}")


class EmptyMapError(RoadMCLError):
    pass


class OutOfExtentError(RoadMCLError):
    pass


class ResourceError(RoadMCLError):
    pass


class DegeneratePointError(RoadMCLError):
    pass


class ConfigError(RoadMCLError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
