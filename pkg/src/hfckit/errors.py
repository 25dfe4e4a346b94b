"""Exception types shared across the toolkit."""

from __future__ import annotations


class ToolkitError(Exception):
    """Base class for all hfckit errors."""


# --- topology model ---------------------------------------------------------

class UnknownElement(ToolkitError):
    """A device or element reference does not resolve in the topology."""


class AmbiguousElement(ToolkitError):
    """A bare token matches more than one element across scopes."""


class LayerAbsent(ToolkitError):
    """The element does not participate at the requested layer."""


class NoPath(ToolkitError):
    """No path exists between the device and its anchor at the layer."""


class AmbiguousPath(ToolkitError):
    """More than one admissible route exists at a mesh layer."""


class CrossDomain(ToolkitError):
    """Devices span more than one domain at the requested layer."""


class MalformedLongName(ToolkitError):
    """A long-name string violates the rendering grammar."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


# --- snapshots and journal ---------------------------------------------------

class SchemaError(ToolkitError):
    """A snapshot or journal document violates the interchange schema."""

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class VersionUnsupported(ToolkitError):
    """The snapshot declares a schema version this build cannot read."""


class NotApproved(ToolkitError):
    """A change event was applied without supervisor approval."""


class UnknownTarget(ToolkitError):
    """A change event targets an element absent from the snapshot."""


class InvalidReplacement(ToolkitError):
    """A replacement element does not validate in its topology context."""


class InvertedInterval(ToolkitError):
    """An outage record has end <= start."""


# --- metrics -----------------------------------------------------------------

class TooFewSamples(ToolkitError):
    """Group classification needs at least two samples."""


class DegenerateBaseline(ToolkitError):
    """Control-chart baseline sigma must be positive."""


# --- analysis ----------------------------------------------------------------

class GridMismatch(ToolkitError):
    """Signatures in one analysis must share a frequency bin grid."""


class EmptyGroup(ToolkitError):
    """Localization requires a group with at least two members."""


class EmptySets(ToolkitError):
    """Layer attribution needs a nonempty anomalous set disjoint from healthy."""


# --- planning ----------------------------------------------------------------

class ForeignDevice(ToolkitError):
    """Consumption was supplied for a device outside the node."""


class DegenerateNode(ToolkitError):
    """The node has too few devices or edges for a split proposal."""


class EmptyWindow(ToolkitError):
    """Availability window has zero or negative length."""


# --- simulator ---------------------------------------------------------------

class BadParams(ToolkitError):
    """Plant generator parameters are out of range."""


class UnknownDomain(ToolkitError):
    """The referenced MAC domain does not exist in the topology."""
