"""Cogeneration planning models: full, semi-coarse, and coarse builders."""

from .instance import (
    DELTA,
    GEN_TECHS,
    TECHS,
    CogenInstance,
    default_month_structure,
    load_instance,
    make_desk_instance,
    make_paper_instance,
    save_instance,
)
from .fullmodel import (
    CogenFullModel,
    CogenSolution,
    build_full,
    evaluate_cost,
    solve_full,
    to_two_stage,
)
from .coarsemodels import (
    CogenCoarseModel,
    CogenSemiModel,
    build_coarse_cogen,
    build_semi_cogen,
    lift_semi_solution,
    solve_cogen_two_level,
)

__all__ = [
    "DELTA",
    "GEN_TECHS",
    "TECHS",
    "CogenInstance",
    "default_month_structure",
    "load_instance",
    "make_desk_instance",
    "make_paper_instance",
    "save_instance",
    "CogenFullModel",
    "CogenSolution",
    "build_full",
    "evaluate_cost",
    "solve_full",
    "to_two_stage",
    "CogenCoarseModel",
    "CogenSemiModel",
    "build_coarse_cogen",
    "build_semi_cogen",
    "lift_semi_solution",
    "solve_cogen_two_level",
]
