"""Figure rendering for mutagame run outputs."""

__version__ = "0.1.0"

from .render import PlotError, PlotSpec, RenderInfo, load_spec, render

__all__ = ["PlotError", "PlotSpec", "RenderInfo", "load_spec", "render", "__version__"]
