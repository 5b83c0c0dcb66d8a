"""Gain-induced signal/idler group delay in high-gain type-II down-conversion.

Modules: ``model`` (parameters, grids), ``magnus`` (closed-form JSA and
delay), ``propagator`` (numerical Heisenberg propagation), ``interferometry``
(coincidence densities and histograms), ``analysis`` (delay extraction),
``clicks`` (threshold-detector statistics), ``nlfit`` (Kerr diagnostics) and
``cli``.
"""
__version__ = "0.1.0"
