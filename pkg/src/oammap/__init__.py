"""Multi-dimensional constellation maps for OAM/WDM mmWave links.

Modeling of Laguerre-Gaussian sub-channel gains, max-min distance
constellation design by successive convex approximation, position clustering
into constellation maps, and numerical verification of the robustness bounds.
"""
from .analysis import (
    BoundReport,
    ChainReport,
    ChainStep,
    DegenerateSupportError,
    appendix_a_chain,
    appendix_b_chain,
    least_squares_alpha,
    monte_carlo_ser,
    theorem1_check,
    theorem2_check,
)
from .beams import (
    BEAM_EXTENT_FACTOR,
    C_LIGHT,
    Z_GUARD_M,
    ChannelMatrix,
    Position,
    ReferenceFrame,
    SystemConfig,
    beam_spot,
    beta_peak,
    boundary_asymmetry,
    carrier_gain_ratio,
    carrier_ratio_across_positions,
    carrier_ratio_z_term,
    channel_matrix,
    channel_response,
    default_frame,
    frame_radius,
    link_gain,
    link_gain_at_beta,
    mode_gain_ratio,
    mode_ratio_across_positions,
    peak_radius,
    write_gain_field_csv,
)
from .designer import (
    Constellation,
    ConstellationFormatError,
    DesignOptions,
    DesignResult,
    design_fixed_power,
    design_total_power,
    extract_power,
    independent_qpsk,
    linearize,
    load_constellation,
    min_distance,
    min_distance_with_power,
    normalized_distance_diff,
    pair_quadratic,
    polish,
    s_form,
    save_constellation,
    stack,
    subchannel_groups,
    unstack,
)
from .mapping import (
    Category,
    ConstellationMap,
    Grid,
    GridDesigns,
    MapFormatError,
    MapHashError,
    MapVersionError,
    build_map,
    cluster_once,
    config_hash,
    design_grid,
    load_map,
    save_map,
    write_assignments_csv,
)
from .socp import SubproblemSolution, SubproblemSpec, solve_subproblem

__all__ = [name for name in dir() if not name.startswith("_")]
