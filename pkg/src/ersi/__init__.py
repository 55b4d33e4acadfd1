"""Reconstruction of the variance of a random elastic source from boundary data at one frequency."""

from .elastics import MaterialParams, PlaneWaveProbe, green_tensor, green_traction
from .errors import (
    ERSIError,
    FormatError,
    GeometryError,
    HeaderMismatchError,
    NumericalError,
    OutOfBandError,
    SingularPointError,
    ValidationError,
)
from .forward import Dataset, ObservationSet, add_noise, fibonacci_sphere, read_dataset, simulate, write_dataset
from .probes import ProbePair, ProbeTriple, conditioning_survey, design_pair, design_triple
from .reconstruct import FourierField, VarianceField, build_lattice, fourier_data, reconstruct_variance, synthesize
from .source import Box, SourceGrid, VarianceProfile, build_grid, builtin_profile

__version__ = "0.1.0"
