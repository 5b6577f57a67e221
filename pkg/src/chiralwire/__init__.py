"""Design of thin metallic nanowires with maximal electromagnetic chirality.

The library models a wire as a spline spine swept by a small twisting
elliptical cross-section, evaluates its leading-order far field operator
in a helicity basis, measures em-chirality from the operator's block
structure, and shape-optimizes spine and twist with a cautious BFGS
scheme driven by analytic gradients.
"""

__version__ = "0.1.0"

from .material import (
    THZ,
    EllipticalCrossSection,
    PermittivityTable,
    builtin_permittivity,
    cross_section_tensor,
    plasmonic_resonance,
    polarization_tensor,
    read_permittivity_csv,
    wavenumber,
)
from .geometry import (
    AdaptedFrame,
    FrameFlipError,
    LineQuadrature,
    SpineSpline,
    TwistSpline,
    WireDesign,
    apply_twist,
    build_rmf,
    curvature,
    eval_spline,
    min_self_distance,
    read_design,
    relative_twist,
    update_frame,
    write_design,
)
from .wavefields import BasisIndex, SphereQuadrature, harmonic_index
from .farfield import (
    FarFieldMatrix,
    QuadratureOverflowError,
    assemble_T,
    assemble_T_derivative,
    blocks,
    build_workspace,
    dump_matrix,
    load_matrix,
)
from .chirality import ChiralityReport, DomainXError, measure, split_blocks
from .objective import (
    DesignVector,
    ObjectiveConfig,
    config_from_design,
    evaluate_phi,
    evaluate_phi_gradient,
    pack_design,
    unpack_design,
)
from .optimizer import (
    BfgsParams,
    BfgsState,
    OptimizeResult,
    bfgs_step,
    load_checkpoint,
    minimize,
    optimize,
    save_checkpoint,
)
from .app import RunConfig, main

__all__ = [
    "__version__",
    "THZ",
    "EllipticalCrossSection",
    "PermittivityTable",
    "builtin_permittivity",
    "cross_section_tensor",
    "plasmonic_resonance",
    "polarization_tensor",
    "read_permittivity_csv",
    "wavenumber",
    "AdaptedFrame",
    "FrameFlipError",
    "LineQuadrature",
    "SpineSpline",
    "TwistSpline",
    "WireDesign",
    "apply_twist",
    "build_rmf",
    "curvature",
    "eval_spline",
    "min_self_distance",
    "read_design",
    "relative_twist",
    "update_frame",
    "write_design",
    "BasisIndex",
    "SphereQuadrature",
    "harmonic_index",
    "FarFieldMatrix",
    "QuadratureOverflowError",
    "assemble_T",
    "assemble_T_derivative",
    "blocks",
    "build_workspace",
    "dump_matrix",
    "load_matrix",
    "ChiralityReport",
    "DomainXError",
    "measure",
    "split_blocks",
    "DesignVector",
    "ObjectiveConfig",
    "config_from_design",
    "evaluate_phi",
    "evaluate_phi_gradient",
    "pack_design",
    "unpack_design",
    "BfgsParams",
    "BfgsState",
    "OptimizeResult",
    "bfgs_step",
    "load_checkpoint",
    "minimize",
    "optimize",
    "save_checkpoint",
    "RunConfig",
    "main",
]
