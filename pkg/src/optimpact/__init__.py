"""Market impact of option metaorders on smile parameters."""

from .calendar import VenueCalendar
from .exceptions import OptImpactError
from .fairpricing import fair_pricing_points, portfolio_fair_pricing, portfolio_fair_pricing_points, swap_param
from .impact import ImpactCurve, PowerLawFit, impact_curve, sqrt_law_fit, variation_proxy
from .metaorder import Metaorder, MetaorderSet, MetaorderStitcher, TradeFill, stitch_metaorders
from .pipeline import PipelineConfig, RunReport, load_config, run_pipeline
from .pricing import OptionSpec, black_price, black_vega, implied_vol
from .synth import SynthConfig, simulate
from .volsurface import QuadraticSmile, SmileSlice, calibrate_slice, param_sensitivity

__version__ = "0.1.0"

__all__ = [
    "VenueCalendar", "OptImpactError", "fair_pricing_points", "portfolio_fair_pricing",
    "portfolio_fair_pricing_points", "swap_param", "ImpactCurve", "PowerLawFit", "impact_curve",
    "sqrt_law_fit", "variation_proxy", "Metaorder", "MetaorderSet", "MetaorderStitcher", "TradeFill",
    "stitch_metaorders", "PipelineConfig", "RunReport", "load_config", "run_pipeline", "OptionSpec",
    "black_price", "black_vega", "implied_vol", "SynthConfig", "simulate", "QuadraticSmile",
    "SmileSlice", "calibrate_slice", "param_sensitivity",
]
