"""SGD stability analysis and spectral trajectory instrumentation."""

__version__ = "0.1.0"
