"""Uplink D2D relay-assisted cellular networks: queues, scheduling, stability.

A discrete-time library built around three pieces: the network model (grid
mobility plus a path-loss/Shannon link-rate channel), the per-MS queue
dynamics with a virtual power queue enforcing an average power budget, and
an online back-pressure policy allocating PRBs by maximum-weight matching.
A companion stability module characterizes the achievable arrival-rate
region of small explicit instances and cross-checks it by simulation.
"""

from .assignment import Matching, max_weight_matching
from .channel import ChannelParams, distance, link_rate, path_loss_db
from .classify import StabilityThresholds, StabilityVerdict, classify_from_stats
from .grid import (
    GridSpec,
    MobilityParams,
    NetworkTopology,
    stationary_distribution,
    step_mobility,
)
from .policy import (
    PolicyConfig,
    PowerLevelSet,
    SchedulingDecision,
    StaleSnapshot,
    build_link_weights,
    decide,
    opt_pow,
)
from .queues import (
    ArrivalConfig,
    QueueState,
    ServiceSummary,
    draw_arrivals,
    long_run_metrics,
    lyapunov_value,
    update_queues,
)
from .sim import (
    CapacityBracket,
    MetricsTrace,
    SimConfig,
    classify_stability,
    run,
    search_capacity,
)
from .stability import (
    MembershipResult,
    RandomizedPolicy,
    StabilityInstance,
    check_membership,
    enumerate_power_vectors,
    instance_from_grid,
    load_instance,
    sample_randomized_policy,
    save_instance,
)

__version__ = "0.1.0"
