"""Session-outcome classification and link re-ranking over search logs.

Sessions are labeled Once/Twice/Multiform/Futile by how many searches it took
to reach a click. Link features from aggregated logs feed a four-model
ensemble whose P(OnceSearch) re-ranks result lists.
"""

from .errors import ConfigError, NumericError, ValidationError
from .session import SessionLabel, SessionRecord, label_session

__version__ = "0.1.0"

__all__ = ["ConfigError", "NumericError", "ValidationError", "SessionLabel", "SessionRecord", "label_session"]
