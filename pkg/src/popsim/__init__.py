"""popsim: population-protocol simulation, influence tracking, exact analysis."""

__version__ = "0.1.0"

from .core import (
    FOLLOWER,
    LEADER,
    Interaction,
    Protocol,
    TrialRecord,
    apply_interaction,
    apply_interaction_inplace,
    configuration_digest,
    default_step_budget,
    output_vector,
    parallel_time,
    run_trial,
    sample_interaction,
)
from .influence import (
    DEMO_SCHEDULE_N5,
    InfluencerObserver,
    InfluencerTable,
    InteractionLog,
    LayeredGraph,
    ScheduleRecorder,
    backward_sets,
    backward_step,
    build_graph,
    demo_log,
    first_exceed_time,
    forward_sets,
)
from .protocols import (
    CATALOG,
    ProtocolLoadError,
    leave_init,
    load_protocol,
    make_protocol,
    one_way_epidemic,
    pairwise_elimination,
    protocol_from_dict,
)
from .rng import Splitmix64, derive_seed, mix64

__all__ = [
    "CATALOG",
    "DEMO_SCHEDULE_N5",
    "FOLLOWER",
    "Interaction",
    "InfluencerObserver",
    "InfluencerTable",
    "InteractionLog",
    "LEADER",
    "LayeredGraph",
    "Protocol",
    "ProtocolLoadError",
    "ScheduleRecorder",
    "Splitmix64",
    "TrialRecord",
    "apply_interaction",
    "apply_interaction_inplace",
    "backward_sets",
    "backward_step",
    "build_graph",
    "configuration_digest",
    "default_step_budget",
    "demo_log",
    "derive_seed",
    "first_exceed_time",
    "forward_sets",
    "leave_init",
    "load_protocol",
    "make_protocol",
    "mix64",
    "one_way_epidemic",
    "output_vector",
    "pairwise_elimination",
    "parallel_time",
    "protocol_from_dict",
    "run_trial",
    "sample_interaction",
]
