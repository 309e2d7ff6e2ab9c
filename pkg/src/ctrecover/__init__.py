"""Iterative signal recovery from exponential-attenuation (CT-style) measurements.

The measurement model is y_i = 1 - exp(-<a_i, x*>_+).  Recovery minimizes the
absolute-deviation loss with Polyak-stepsize subgradient methods, with a
squared-loss gradient baseline, Gaussian / randomized Walsh-Hadamard / Radon
sensing ensembles, and total-variation-constrained reconstruction through a
Douglas-Rachford ball projection.
"""

from .theory import (
    TheoryConstants,
    condition_number,
    erfc,
    erfcx,
    exp_plus_moment,
    exp_pos_moment,
    expected_loss_at_zero,
    gd_stepsize_schedule,
    lipschitz_bound,
    mu_bound,
    theory_constants,
)
from .sensing import (
    ExplicitEnsemble,
    GaussianEnsemble,
    MeasurementSet,
    RwhtEnsemble,
    SensingEnsemble,
    explicit_ensemble,
    forward_model,
    fwht,
    gaussian_ensemble,
    generate_measurements,
    load_ensemble,
    load_measurements,
    rwht_ensemble,
    sample_signal,
    save_ensemble,
    save_measurements,
)
from .losses import (
    Objective,
    l1_subgradient,
    l1_subgradient_many,
    l1_value,
    l1_value_many,
    sq_gradient,
    sq_value,
    subgradient_alignment,
)
from .solvers import (
    KappaCapExceeded,
    NumericalError,
    SolveOptions,
    SolveTrace,
    ad_polyak_sgm,
    gradient_descent,
    polyak_sgm,
    polyak_sgm_noopt,
)
from .tv import (
    DrState,
    GraphSolveError,
    TvProjectionError,
    graph_project,
    group_ball_project,
    group_norm,
    group_prox,
    jtv_adjoint,
    jtv_apply,
    jtv_matrix,
    mat,
    tv_ball_project,
    tv_norm,
    vec,
)
from .imaging import (
    RadonOperator,
    SHEPP_LOGAN_ELLIPSES,
    psnr,
    radon_ensemble,
    radon_operator,
    read_pgm,
    shepp_logan,
    write_image_csv,
    write_pgm,
)

__version__ = "0.1.0"
