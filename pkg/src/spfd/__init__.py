"""Magneto-quasistatic dosimetry on voxel phantoms.

Computes induced electric fields inside a conductive voxel body from sampled
magnetic flux density amplitudes: face fluxes by trilinear interpolation,
tree-cotree gauging of the edge vector potential, an AMG-preconditioned
flexible GMRES solve of the conductivity-weighted Poisson system, and
percentile-based exposure statistics.
"""

from .dosimetry import (
    ExposureReport,
    check_limits,
    edge_voltages,
    node_field_strength,
    percentile99,
    scale_reference_field,
    voxel_average,
)
from .errors import SpfdError
from .field_source import (
    CoilSpec,
    FieldSampleSet,
    Lattice,
    UniformField,
    coil_field,
    divergence_clean,
    interpolate_to_faces,
    load_samples,
    sample_on_lattice,
    save_samples,
)
from .fit_operators import (
    PoissonSystem,
    StaggeredGrid,
    assemble_poisson,
    build_curl,
    build_divergence,
    build_gradient,
    build_mkappa,
)
from .gauging import SpanningTree, build_bfs_tree, build_comb_tree, gauge_vector_potential
from .linsolve import AmgHierarchy, SolveConfig, SolveReport, amg_setup, fgmres_solve, v_cycle
from .pipeline import PipelineConfig, PipelineTiming, run_benchmark, run_pipeline
from .voxel_model import (
    ConductivitySamples,
    Tissue,
    VoxelModel,
    conductive_component_labels,
    kappa_at,
    load_model,
    make_phantom,
    save_model,
)

__version__ = "0.1.0"
