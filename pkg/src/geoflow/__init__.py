"""Finite element harmonic map heat flow into spheres and closed hypersurfaces."""
from .assembly import (
    SparseSystem,
    assemble_general_system,
    assemble_step_system,
    bilinear_b,
    discrete_energy,
    first_variation,
    general_energy,
    h1_error,
    mass_matrix,
    second_variation_apply,
    stiffness_matrix,
)
from .errors import FlowError, FlowNotConverged, GeoflowError, GeometryError, MeshError, SolverError
from .flow import (
    FlowConfig,
    FlowState,
    MonitorRecord,
    cg_solve,
    run_flow,
    scaling_ode_reference,
    solve_stationary,
    step,
    unstable_extension_ode,
)
from .mesh import (
    SurfaceMesh,
    VertexField,
    deform,
    experiment_deformation,
    mesh_stats,
    octahedron,
    polygonal_circle,
    refine_global,
    sphere_mesh,
)
from .targets import HypersurfaceTarget, SphereTarget, ellipsoid, make_target, sphere_as_hypersurface

__version__ = "0.1.0"
