"""Python bindings for the subset-posterior sampling toolkit."""

from ._wsampler import (  # noqa: F401
    WsamplerError,
    __version__,
    combine,
    conditional_weight,
    fukunaga_bandwidth,
    gaussian_kl,
    generate_bernoulli,
    generate_logistic,
    generate_mixture,
    partition,
    run_pipeline,
    run_subsets,
    tv_distance,
    weierstrass_transform,
)
