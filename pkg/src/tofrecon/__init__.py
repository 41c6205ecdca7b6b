"""Time-of-flight transient simulation, frequency extrapolation and depth decoding.

Submodules: ``core`` (time grid, Fourier coefficients), ``transient`` (scenes),
``itof`` (measurement simulator), ``dtof`` (truncated IFT), ``decode`` (depth
decoders), ``freqnet`` (per-pixel MLP), ``evaluate`` (metrics and sweeps),
``formats`` and ``cli``. Importing the package itself stays light so the
command line can cap BLAS threads before numpy loads.
"""

__version__ = "0.1.0"
