"""Simulation and path-entropy analysis of reactive jump Markov processes."""

from .cme import (
    Distribution,
    Generator,
    StateBox,
    build_generator,
    conditional_matrix,
    detailed_balance_residual,
    gibbs_shannon_entropy,
    mean_entropy_production_rate,
    relaxation_time,
    stationary,
    total_variation,
    transient,
)
from .network import (
    ChannelGrouping,
    Reaction,
    ReactionNetwork,
    Species,
    group_channels,
    lumped_rate,
    parse_network,
    preset,
    propensities,
    propensity,
    serialize_network,
)
from .pathentropy import (
    ft_test,
    histogram,
    max_reversibility_gap,
    path_log_probability,
    stationary_window_samples,
    symmetry_test,
    z_channel,
    z_conditional,
    z_lumped,
)
from .ssa import RngStream, Trajectory, discretize, reverse, simulate, state_at

__version__ = "0.1.0"
