"""Root-cause localisation for output-distribution shifts in dataflow pipelines.

The toolkit treats the dataflow graph of a system as a causal graphical
model: data streams are random variables, compute nodes are conditional
distributions. Given observations from a window before and a window after a
suspected change, it fits per-stream mechanisms on both windows and scores
every backward-reachable stream by its Shapley value in the game whose
payoff is the divergence the stream's mechanism replacement induces on the
target. A deterministic pipeline simulator and an experiment harness
reproduce fault-localisation scenarios end to end.
"""

from .attribution import (
    AttributionConfig,
    AttributionReport,
    DeviationResult,
    attribute_change,
    detect_drift,
    mechanism_deviation,
    scores_to_probabilities,
)
from .dataset import (
    ABSENT,
    DatasetError,
    ImputePolicy,
    WindowLabel,
    WindowedDataset,
    impute_absent,
    load_window,
    read_window_csv,
    read_window_jsonl,
    summary_stats,
    to_csv_text,
    write_window_csv,
)
from .graph import (
    ComputeNode,
    CycleError,
    DataflowGraph,
    GraphParseError,
    GraphValidationError,
    UnknownStreamError,
    load_graph,
    parse_graph,
    serialise_graph,
)
from .mechanisms import (
    ConditionalMechanism,
    MechanismError,
    MechanismSet,
    RootMechanism,
    fit_conditional,
    fit_mechanism_set,
    fit_root,
    sample_hybrid,
    sample_model,
)
from .simulator import (
    ExperimentSummary,
    FaultKind,
    FaultSpec,
    PipelineSpec,
    SimulationError,
    get_pipeline,
    parse_fault,
    pipeline_names,
    run_experiment,
    simulate,
)
from .stats import (
    KLSupportError,
    ShapleyGame,
    kl_divergence,
    kl_divergence_binned,
    shapley,
    two_sample_perm_test,
    welch_t_test,
)

__version__ = "0.1.0"
