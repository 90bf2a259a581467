"""tracelab: deletion-channel trace reconstruction and verification toolkit."""

from .bitstring import Bits, Span, find_occurrence, random_bits
from .channel import (Channel, Trace, brute_force_trace_distribution,
                      exact_bit_marginal, exact_shifted_bit_marginal,
                      generating_function_eval, sample_trace, sample_traces)
from .errors import (ContractError, InsufficientData, ParamError,
                     ReconstructionError, StitchMismatch, TracelabError,
                     Undecidable)
from .rng import stream
from .shifted import (SeparationCertificate, ShiftDistribution,
                      find_separating_index, mean_trace_vector,
                      verify_polynomial_identity)

__version__ = "0.1.0"
