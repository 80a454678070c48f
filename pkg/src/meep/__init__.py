"""meep: a click-constrained dialog platform for navigation assistance.

The agent side of every conversation is composed entirely of clicks: api
calls over clicked tokens and variable fields, templated utterances, and an
explicit hand-back to the user.  Everything that happens is logged in a
replayable format, and the decision structure of a session doubles as
training data for learned agents.
"""

__version__ = "0.1.0"

from .errors import MeepError
from .places import FieldKind, FixtureBackend, PlacesDataset, load_bundled_dataset
from .session import (
    CallApi,
    ClickDecision,
    SayTemplate,
    Session,
    StartDriving,
    WaitForUser,
    apply_action,
    create_session,
)
from .templates import TemplateRegistry

__all__ = [
    "MeepError",
    "FieldKind",
    "FixtureBackend",
    "PlacesDataset",
    "load_bundled_dataset",
    "CallApi",
    "SayTemplate",
    "WaitForUser",
    "StartDriving",
    "ClickDecision",
    "Session",
    "apply_action",
    "create_session",
    "TemplateRegistry",
    "__version__",
]
