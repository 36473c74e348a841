"""Risk-sensitive partially observable zero-sum stochastic games.

Exact belief filtering over (hidden state, accumulated cost), finite-horizon
minimax backward induction with saddle-point policies, and bracketed
infinite-horizon values.
"""
from pathlib import Path

from pogs._kernels import COMPILED
from pogs.belief import AugmentedState, Belief, filter, initial_belief, phi_update
from pogs.errors import (ExponentOverflow, ImpossibleObservation, InadmissibleAction,
                         InvalidModel, ModelFormatError, NodeBudgetExceeded, PogsError,
                         PolicyUndefined)
from pogs.exp_utility import phi_e_update, q_hat_x, solve_finite_exp
from pogs.matrix_game import MatrixGameSolution, solve_matrix_game
from pogs.model import (GameSpec, History, Utility, load_model, make_spec, random_spec,
                        validate)
from pogs.solver import (PolicyTree, SolveResult, evaluate_policy_pair, solve_finite,
                         solve_infinite, tail_bound)

__version__ = "0.1.0"

DATA_DIR = Path(__file__).parent / "data"


def bundled_model(name: str) -> Path:
    """Path of a model shipped with the package ('minimal' or 'micro')."""
    return DATA_DIR / f"{name}.json"
