"""Pedestrian crossing-intention prediction from fused sequential and
visual trajectory representations."""

__version__ = "0.1.0"


def __getattr__(name):
    # Lazy so the CLI can pin BLAS thread env vars before numpy loads.
    if name in ("Tensor", "no_grad"):
        from . import autograd

        return getattr(autograd, name)
    raise AttributeError(name)
