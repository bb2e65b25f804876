"""haargp: Haar moment calculus, quantum-model kernels, and near-Gaussian corrections.

Layout: linalg and sym hold the operator and permutation primitives,
moments the Weingarten machinery, circuit the parametrized-model
ensembles, gp and qntk the kernel surrogates and training dynamics,
near_gaussian the quartic-action corrections, and experiments/cli the
reproducible drivers.
"""

__version__ = "0.1.0"

from .backend import active_backend, get_kernels
from .circuit import (
    CircuitSpec,
    Layer,
    ObservableSet,
    build_unitary,
    haar_layer_circuit,
    model_output,
    pauli_z_observables,
    random_circuit,
    sample_outputs,
    sample_parameters,
    spec_from_json,
    spec_to_json,
    zz_feature_map,
)
from .config import LIMITS, TOLERANCES, Limits, Tolerances
from .data import (
    FeatureTable,
    ingest_csv,
    pca_fit,
    pca_reduce,
    synthetic_two_class,
)
from .errors import (
    ConditioningError,
    ConfigError,
    ContractViolation,
    DimensionError,
    HaargpError,
    ResourceLimitError,
    SchemaError,
    SingularGramError,
    TrainingDivergence,
    UnsupportedOrderError,
)
from .experiments import (
    ExperimentConfig,
    ResultBundle,
    run_experiment,
    substream,
    sweep_gaussianity,
)
from .gp import (
    GPPosterior,
    KernelMatrix,
    ObservedSet,
    PredictionSet,
    fidelity_kernel,
    gp_posterior,
    marginal_predictive,
    prior_kernel,
    state_gram,
)
from .linalg import (
    DensityMatrix,
    HermitianObservable,
    UnitaryOperator,
    basis_state,
    pauli_string,
    pure_state,
    random_density_matrix,
    random_hermitian,
    random_pure_state,
    sample_haar_unitary,
)
from .moments import (
    MomentEstimate,
    MomentSpec,
    WeingartenTable,
    connected_moment,
    haar_expectation,
    leading_order,
    moment_record,
    monte_carlo_moment,
    weingarten_table,
)
from .near_gaussian import (
    GaussianityReport,
    MomentSet,
    QuarticAction,
    corrected_covariance,
    corrected_mean,
    couplings_from_moments,
    gaussianity_diagnostics,
    predicted_connected_four,
)
from .qntk import (
    GradientTensor,
    LinearizedDynamics,
    QNTKMatrix,
    TrainingTrajectory,
    gradient_descent_train,
    haar_averaged_qntk,
    haar_averaged_qntk_leading,
    linearized_dynamics,
    meta_kernel_estimate,
    parameter_shift_gradient,
    qntk,
    shift_derivative,
    theta_star,
)
