"""Sphere-harmonic encoder: harmonic features, zonal kernels, dual attention."""

from .attention import DualSkaLayer, multipole_bruteforce, sfa_output, sfa_scan, ska_attention
from .embedding import ShEmbedding
from .encoder import GmNetModel, ModelConfig, count_parameters
from .ffn import ShFfnLayer, compile_zonal_coefficients, funk_hecke_mc_check
from .harmonics import HarmonicBasis, feature_dim, gegenbauer, get_basis, harmonic_space_dim, sphere_surface
from .kernel import ZonalKernel, gram_matrix, kernel_value

__all__ = [
    "DualSkaLayer",
    "GmNetModel",
    "HarmonicBasis",
    "ModelConfig",
    "ShEmbedding",
    "ShFfnLayer",
    "ZonalKernel",
    "compile_zonal_coefficients",
    "count_parameters",
    "feature_dim",
    "funk_hecke_mc_check",
    "gegenbauer",
    "get_basis",
    "gram_matrix",
    "harmonic_space_dim",
    "kernel_value",
    "multipole_bruteforce",
    "sfa_output",
    "sfa_scan",
    "ska_attention",
    "sphere_surface",
]

__version__ = "0.1.0"
