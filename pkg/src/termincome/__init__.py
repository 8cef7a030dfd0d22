"""Consumption and investment with terminating income: HJB solver, simulator and duality checks."""

from .errors import *  # noqa: F401,F403
from .hjb import (
    DualTransform,
    FeedbackPolicy,
    ValueSolution,
    WealthGrid,
    boundary_condition,
    conjugate_transform,
    extract_feedback,
    hjb_curvature,
    solve_hjb,
)
from .model import (
    Constants,
    DiscountMeasure,
    HorizonVariant,
    MarketParams,
    PowerUtility,
    derive_constants,
    merton_feedback,
    merton_value,
    merton_wealth_closed_form,
    perpetual_value,
)

__version__ = "0.1.0"
