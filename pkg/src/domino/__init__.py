"""DOMINO: multi-hop clock synchronization for infrastructure Wi-Fi.

Sans-IO protocol engine plus a deterministic discrete-event simulator used to
study convergence, loop freedom, parent selection, and grandmaster failover
under frame loss and mobility.
"""

__version__ = "0.1.0"

from .wire import (  # noqa: F401
    Beacon,
    BeaconRecord,
    ClockQuality,
    FupMessage,
    INFINITE_QUALITY,
    NodeId,
    Ordering,
    compare_quality,
    decode_fup,
    encode_fup,
)
