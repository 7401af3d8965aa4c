"""homloop: loop maps, Melnikov splitting and saddle-passage scaling laws for
planar piecewise-smooth systems with a saddle on the switching curve."""

__version__ = "0.1.0"
