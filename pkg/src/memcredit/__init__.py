"""Episodic-memory classifier with interchangeable credit-assignment mechanisms."""
from .autoencoder import DecoderParams, decode, recon_step
from .credit import (EncoderParams, Mechanism, OracleDecoder, SynthNetParams,
                     assign_baseline, assign_reinstate_approx, assign_reinstate_exact,
                     encode, reinstate_forward, synth_apply_at_write, synth_predict,
                     synth_train)
from .data import Dataset, load_idx, load_mnist, stream, synthetic_blobs
from .harness import (TrainConfig, evaluate, footprint_report, emit_outputs,
                      run_experiment, train_step)
from .memory import EpisodicMemory, MemorySlot, cosine, read, read_backward
from .nn import Rng

__version__ = "0.1.0"
