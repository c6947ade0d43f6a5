"""Two-stage transfer Lasso: replica predictions, finite-size fits and experiment commands."""

import json

from ._translasso import (
    HARD_CONSTRAINT,
    Hyperparams,
    ProblemGeometry,
    conditional_gen_error,
    fit_finetune,
    fit_pretraining,
    generate_instance,
    solve_point,
    tune_lambda1,
    tune_strategy,
    _run_command,
    __version__,
)


def run_command(command, config_path, workers=1):
    """Runs a CLI command in-process and returns its records as dictionaries."""
    return json.loads(_run_command(command, str(config_path), workers))


__all__ = [
    "HARD_CONSTRAINT",
    "Hyperparams",
    "ProblemGeometry",
    "conditional_gen_error",
    "fit_finetune",
    "fit_pretraining",
    "generate_instance",
    "run_command",
    "solve_point",
    "tune_lambda1",
    "tune_strategy",
]
