"""Covariance assisted screening and estimation for rare, weak signals."""

from .errors import (CaseError, ComponentTooLarge, InvalidDimension, InvalidFilter,
                     InvalidInput, InvalidParameter, NoSignalDetected, NumericFailure)
from .gram import (GramModel, LinearFilter, SparsifiedPair, gram_changepoint, gram_dense,
                   gram_farima, gram_powerdecay, sparsify)
from .gosd import (Gosd, build_expanded_graph, build_gosd, components_of_subset,
                   enumerate_connected_subgraphs)
from .screening import ScreenConfig, ScreeningState, ps_screen, test_statistic, threshold_q
from .estimation import (CaseConfig, PeConfig, SelectionResult, case_select,
                         l0_constrained_fit, pe_step)
from .simlab import (ExperimentSpec, RwDesign, gen_beta, gen_data, hamming_error,
                     run_experiment)

__version__ = "0.1.0"
