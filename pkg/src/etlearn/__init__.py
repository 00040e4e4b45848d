"""Event-triggered state estimation with event-triggered model learning.

A sender transmits its state to a remote agent only when a shared model-based
prediction drifts too far from the truth. The package simulates that protocol
for linear Gaussian systems, estimates the model-implied distribution of the
times between transmissions, and triggers a least-squares re-identification
whenever the observed communication pattern contradicts the model.
"""

from .linsys import (
    GaussianSampler,
    LinearSystem,
    ReferenceSignal,
    eval_reference,
    make_closed_loop,
    sample_noise,
    step,
)
from .protocol import (
    CommEvent,
    EtseLink,
    LockstepError,
    ModelEstimate,
    Predictor,
    Transport,
    broadcast_model,
    predict,
    protocol_step,
    state_trigger,
)
from .scenario import (
    ConfigError,
    LearningEpisode,
    ScenarioConfig,
    ScenarioTrace,
    builtin_scenario_path,
    emit_csv,
    load_scenario,
    parse_scenario,
    run_scenario,
)
from .stopping import (
    DiscretizationError,
    OuProcess,
    StoppingTimeEstimate,
    bvp_expected_exit_time_1d,
    discretize_to_ou,
    grid_transition,
    mc_expected_stopping_time,
    mc_refined_estimate,
)
from .sysid import (
    InsufficientExcitationError,
    RegressionData,
    assemble,
    ols_fit,
    run_learning_experiment,
)
from .trigger import (
    SustainGate,
    TauWindow,
    TriggerConfig,
    evaluate_approx,
    evaluate_exact,
    kappa_approx,
    kappa_exact,
    sustained_gate,
)
from .wire import ModelUpdate, StateUpdate, WireError, decode_message, encode_message

__version__ = "0.1.0"
